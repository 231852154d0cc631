"""Turn token sequences into teacher-forced tensors.

Position ``p`` of a batch holds input token ``p`` and the targets of token
``p + 1``. Travel time for a target visit is measured from its anchor visit:
the previous visit, or for the first visit of an answer span, the visit just
before the corresponding BLANK.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .encoders import token_id
from .preprocess import SpecialToken, TimeScaling
from .reframe import reframe_with_mask, draw_mask
from .types import ReframedSequence, Token, TokenKind, VisitSequence, visit_token


@dataclass(frozen=True)
class Instance:
    tokens: tuple[Token, ...]
    # first token index whose prediction enters the loss and the metrics
    predict_from: int
    # per token: index of the visit its travel time is measured from, or -1
    anchors: tuple[int, ...]


def next_visit_instance(seq: VisitSequence) -> Instance:
    tokens = tuple(visit_token(v) for v in seq)
    return Instance(tokens, 1, tuple(range(-1, len(tokens) - 1)))


def infill_instance(rs: ReframedSequence) -> Instance:
    tokens = rs.tokens
    anchors = [-1] * len(tokens)
    for j in range(1, rs.sep_position):
        if tokens[j].is_visit and tokens[j - 1].is_visit:
            anchors[j] = j - 1
    for k, (start, end) in enumerate(rs.answer_spans):
        anchors[start] = rs.blank_positions[k] - 1
        for j in range(start + 1, end):
            anchors[j] = j - 1
    return Instance(tokens, rs.sep_position + 1, tuple(anchors))


def infill_instances(
    sequences: Sequence[VisitSequence], mask_prob: float, rng: np.random.Generator
) -> list[Instance]:
    """Fresh random masks for every sequence (sequences shorter than 3 are skipped)."""
    out = []
    for seq in sequences:
        if len(seq) >= 3:
            out.append(infill_instance(reframe_with_mask(seq, draw_mask(len(seq), mask_prob, rng))))
    return out


@dataclass
class Batch:
    ids: torch.Tensor         # (B, L) input token ids
    xy: torch.Tensor          # (B, L, 2) meters
    arrival: torch.Tensor     # (B, L) days
    departure: torch.Tensor   # (B, L) days
    is_visit: torch.Tensor    # (B, L)
    tgt_ids: torch.Tensor     # (B, L) id of token p+1
    tgt_visit: torch.Tensor   # (B, L) token p+1 is a visit
    tgt_arrival: torch.Tensor  # (B, L) arrival of token p+1, days
    tgt_travel: torch.Tensor  # (B, L) scaled travel time of token p+1
    tgt_duration: torch.Tensor  # (B, L) scaled duration of token p+1
    loss_mask: torch.Tensor   # (B, L) prediction counted
    temporal_mask: torch.Tensor  # (B, L) temporal targets defined and counted

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def region_eval_mask(self) -> torch.Tensor:
        return self.loss_mask & self.tgt_visit


def collate(
    instances: Sequence[Instance], scaling: TimeScaling = TimeScaling(), time_unit: float = 86_400.0
) -> Batch:
    b = len(instances)
    length = max(len(inst.tokens) for inst in instances) - 1
    if length < 1:
        raise ValueError("instances need at least two tokens")
    ids = np.full((b, length + 1), int(SpecialToken.PAD), dtype=np.int64)
    xy = np.zeros((b, length + 1, 2))
    arr = np.zeros((b, length + 1))
    dep = np.zeros((b, length + 1))
    vis = np.zeros((b, length + 1), dtype=bool)
    travel = np.zeros((b, length + 1))
    dur = np.zeros((b, length + 1))
    has_anchor = np.zeros((b, length + 1), dtype=bool)
    counted = np.zeros((b, length + 1), dtype=bool)
    for i, inst in enumerate(instances):
        n = len(inst.tokens)
        counted[i, inst.predict_from : n] = True
        for j, tok in enumerate(inst.tokens):
            ids[i, j] = token_id(tok)
            if tok.kind is TokenKind.VISIT:
                v = tok.visit
                xy[i, j] = (v.x, v.y)
                arr[i, j] = v.arrival / time_unit
                dep[i, j] = v.departure / time_unit
                vis[i, j] = True
                dur[i, j] = scaling.duration_target(v.departure - v.arrival)
                a = inst.anchors[j]
                if a >= 0:
                    travel[i, j] = scaling.travel_target(v.arrival - inst.tokens[a].visit.departure)
                    has_anchor[i, j] = True

    # fields own their memory; inputs and shifted targets must not alias
    t = lambda a: torch.from_numpy(np.ascontiguousarray(a).copy())
    return Batch(
        ids=t(ids[:, :-1]),
        xy=t(xy[:, :-1]),
        arrival=t(arr[:, :-1]),
        departure=t(dep[:, :-1]),
        is_visit=t(vis[:, :-1]),
        tgt_ids=t(ids[:, 1:]),
        tgt_visit=t(vis[:, 1:]),
        tgt_arrival=t(arr[:, 1:]),
        tgt_travel=t(travel[:, 1:]),
        tgt_duration=t(dur[:, 1:]),
        loss_mask=t(counted[:, 1:]),
        temporal_mask=t(counted[:, 1:] & vis[:, 1:] & has_anchor[:, 1:]),
    )


def iterate_batches(instances: Sequence[Instance], batch_size: int, order=None):
    order = range(len(instances)) if order is None else order
    order = list(order)
    for k in range(0, len(order), batch_size):
        yield [instances[i] for i in order[k : k + batch_size]]
