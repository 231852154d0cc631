"""Autoregressive decoding: next-visit prediction and blank infilling.

Each visit is decoded region first, then travel time (conditioned on the
region), then duration (conditioned on region and arrival). GREEDY takes the
most probable region and the mode of each clipped mixture; SAMPLE draws from
the categorical and the clipped mixtures with a seeded generator.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import gmm
from .checkpoint import Checkpoint
from .encoders import token_features
from .preprocess import N_SPECIAL, SpecialToken
from .reframe import assemble, first_violation
from .types import ANS, SEP, Token, TokenKind, Visit, VisitSequence, visit_token


class DecodeMode(str, enum.Enum):
    GREEDY = "greedy"
    SAMPLE = "sample"


@dataclass(frozen=True)
class Decode:
    mode: DecodeMode = DecodeMode.GREEDY
    seed: int = 0

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


@dataclass
class NextVisitPrediction:
    visit: Visit | None           # None when the decoded token is ANS
    region_probs: np.ndarray      # (V,) full categorical at the decoding position
    travel: gmm.GaussianMixtureParams | float | None = None
    duration: gmm.GaussianMixtureParams | float | None = None


class _Decoder:
    def __init__(self, ckpt: Checkpoint, decode: Decode):
        self.model = ckpt.model.eval()
        self.vocab = ckpt.vocab
        self.scaling = ckpt.scaling
        self.decode = decode
        self.rng = decode.rng()
        self.unit = self.model.cfg.encoder.time_unit

    @torch.no_grad()
    def step(self, tokens: Sequence[Token], anchor: Visit, allow_ans: bool) -> NextVisitPrediction:
        model = self.model
        ids, xy, arr, dep, vis = (t.unsqueeze(0) for t in token_features(list(tokens), self.unit))
        h, allowed = model.encode_sequence(ids, xy, arr, dep, vis)
        logits = model.region_logits(h, allowed)[0, -1].double()
        probs = torch.softmax(logits, dim=-1).numpy()

        candidates = np.zeros(len(probs), dtype=bool)
        candidates[N_SPECIAL:] = True
        if allow_ans:
            candidates[int(SpecialToken.ANS)] = True
        choice = self._pick(np.where(candidates, probs, 0.0))
        if choice == int(SpecialToken.ANS):
            return NextVisitPrediction(None, probs)

        target = torch.zeros_like(ids)
        target[0, -1] = choice
        travel = model.travel_time_params(h, target, allowed)
        travel = travel[0, -1]
        arrival = anchor.departure + self._seconds(travel, self.scaling.travel_unit)

        t_arr = torch.zeros(ids.shape, dtype=h.dtype)
        t_arr[0, -1] = arrival / self.unit
        duration = model.duration_params(h, target, t_arr, allowed)[0, -1]
        departure = arrival + self._seconds(duration, self.scaling.duration_unit)

        x, y = self.vocab.centroid(choice)
        visit = Visit(choice, arrival, departure, x, y)
        return NextVisitPrediction(visit, probs, _plain(travel), _plain(duration))

    def _pick(self, weights: np.ndarray) -> int:
        if self.decode.mode is DecodeMode.GREEDY:
            return int(np.argmax(weights))
        return int(self.rng.choice(len(weights), p=weights / weights.sum()))

    def _seconds(self, head_out, unit: float) -> int:
        if isinstance(head_out, torch.Tensor) and head_out.dim() == 0:
            value = max(0.0, float(head_out))
        elif self.decode.mode is DecodeMode.GREEDY:
            value = gmm.clipped_mode(head_out)
        else:
            value = gmm.sample(head_out, self.rng)
        return int(round(value * unit))


def _plain(out):
    if isinstance(out, torch.Tensor):
        return float(out)
    return out.detach()


def predict_next_visit(context: VisitSequence | Sequence[Visit], ckpt: Checkpoint,
                       decode: Decode = Decode()) -> NextVisitPrediction:
    visits = list(context.visits if isinstance(context, VisitSequence) else context)
    if not visits:
        raise ValueError("context must contain at least one visit")
    return _Decoder(ckpt, decode).step([visit_token(v) for v in visits], visits[-1], allow_ans=False)


@dataclass
class BlankDiagnostics:
    n_visits: int
    forced_close: bool = False
    overruns_next_visit: bool = False


@dataclass
class InfillResult:
    agent: str
    visits: list[Visit]
    generated: list[Token]
    blanks: list[BlankDiagnostics] = field(default_factory=list)
    violation_index: int | None = None

    @property
    def consistent(self) -> bool:
        return self.violation_index is None

    @property
    def n_ans(self) -> int:
        return sum(t.kind is TokenKind.ANS for t in self.generated)

    def to_json(self) -> dict:
        return {"agent": self.agent, "visits": [v.to_json() for v in self.visits]}

    def diagnostics(self) -> dict:
        return {
            "agent": self.agent,
            "consistent": self.consistent,
            "violation_index": self.violation_index,
            "blanks": [
                {"n_visits": b.n_visits, "forced_close": b.forced_close,
                 "overruns_next_visit": b.overruns_next_visit}
                for b in self.blanks
            ],
        }


def infill(partial: Sequence[Token], ckpt: Checkpoint, decode: Decode = Decode(),
           max_per_blank: int = 8, agent: str = "") -> InfillResult:
    """Fill every BLANK of ``partial``; at most ``max_per_blank`` visits per blank."""
    partial = list(partial)
    kinds = [t.kind for t in partial]
    if TokenKind.SEP in kinds or TokenKind.ANS in kinds or TokenKind.PAD in kinds:
        raise ValueError("partial sequence may only hold visits and BLANKs")
    blank_pos = [i for i, k in enumerate(kinds) if k is TokenKind.BLANK]
    if not blank_pos:
        raise ValueError("partial sequence has no BLANK")
    for i in blank_pos:
        if i == 0 or not partial[i - 1].is_visit:
            raise ValueError("every BLANK must follow a visit")

    decoder = _Decoder(ckpt, decode)
    max_len = ckpt.model.cfg.max_seq_len
    tokens = partial + [SEP]
    generated: list[Token] = []
    answers: list[list[Visit]] = []
    diags: list[BlankDiagnostics] = []
    for pos in blank_pos:
        span: list[Visit] = []
        anchor = partial[pos - 1].visit
        forced = False
        while True:
            if len(span) >= max_per_blank or len(tokens) >= max_len:
                forced = True
                break
            pred = decoder.step(tokens, anchor, allow_ans=True)
            if pred.visit is None:
                break
            span.append(pred.visit)
            anchor = pred.visit
            tok = visit_token(pred.visit)
            tokens.append(tok)
            generated.append(tok)
        tokens.append(ANS)
        generated.append(ANS)
        following = partial[pos + 1] if pos + 1 < len(partial) else None
        overrun = bool(
            span and following is not None and following.is_visit
            and span[-1].departure > following.visit.arrival
        )
        answers.append(span)
        diags.append(BlankDiagnostics(len(span), forced, overrun))

    visits = assemble(partial, answers)
    return InfillResult(agent, visits, generated, diags, first_violation(visits))


def parse_partial(obj: dict) -> tuple[str, list[Token]]:
    """JSONL partial record: ``{"agent", "visits": [visit | {"blank": true}]}``."""
    tokens = []
    for entry in obj["visits"]:
        if entry.get("blank"):
            tokens.append(Token(TokenKind.BLANK))
        else:
            tokens.append(visit_token(Visit.from_json(entry)))
    return str(obj.get("agent", "")), tokens


__all__ = [
    "Decode",
    "DecodeMode",
    "InfillResult",
    "NextVisitPrediction",
    "infill",
    "parse_partial",
    "predict_next_visit",
]
