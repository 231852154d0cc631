"""Infilling rearrangement and its inverse.

``[x1, x2, x3, x4, x5]`` with ``x2, x3`` dropped becomes
``[x1, BLANK, x4, x5, SEP, x2, x3, ANS]``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .types import (
    ANS,
    BLANK,
    SEP,
    MalformedSequenceError,
    ReframedSequence,
    Token,
    TokenKind,
    Visit,
    VisitSequence,
    check_chronological,
    visit_token,
)


class ReframeError(ValueError):
    pass


class ArityError(ValueError):
    pass


class ConsistencyError(ValueError):
    pass


def draw_mask(n: int, mask_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli drops for visits ``1..n-2``; the ends are never dropped."""
    drops = np.zeros(n, dtype=bool)
    if n > 2:
        drops[1:-1] = rng.random(n - 2) < mask_prob
    return drops


def reframe_with_mask(seq: VisitSequence, drops: Sequence[bool]) -> ReframedSequence:
    visits = seq.visits
    n = len(visits)
    if n < 3:
        raise ReframeError(f"need at least 3 visits to reframe, got {n}")
    drops = [bool(d) for d in drops]
    if len(drops) != n:
        raise ReframeError("mask length differs from sequence length")
    if drops[0] or drops[-1]:
        raise ReframeError("first and last visits cannot be dropped")

    partial: list[Token] = []
    spans: list[list[Visit]] = []
    blanks: list[int] = []
    for i, v in enumerate(visits):
        if not drops[i]:
            partial.append(visit_token(v))
        elif drops[i - 1]:
            spans[-1].append(v)
        else:
            blanks.append(len(partial))
            partial.append(BLANK)
            spans.append([v])

    tokens = partial + [SEP]
    answer_spans = []
    for span in spans:
        start = len(tokens)
        tokens.extend(visit_token(v) for v in span)
        answer_spans.append((start, len(tokens)))
        tokens.append(ANS)
    return ReframedSequence(tuple(tokens), tuple(blanks), len(partial), tuple(answer_spans))


def reframe(seq: VisitSequence, mask_prob: float, rng: np.random.Generator) -> ReframedSequence:
    """Drop each interior visit with ``mask_prob`` and rearrange for infilling."""
    if len(seq) < 3:
        raise ReframeError(f"need at least 3 visits to reframe, got {len(seq)}")
    return reframe_with_mask(seq, draw_mask(len(seq), mask_prob, rng))


def reconstruct(
    partial: Sequence[Token], answers: Sequence[Sequence[Visit]], agent: str = ""
) -> VisitSequence:
    """Replace the k-th BLANK of ``partial`` with ``answers[k]``; must come out chronological."""
    visits = assemble(partial, answers)
    try:
        check_chronological(visits)
    except MalformedSequenceError as exc:
        raise ConsistencyError(str(exc)) from exc
    return VisitSequence(agent, tuple(visits))


def assemble(partial: Sequence[Token], answers: Sequence[Sequence[Visit]]) -> list[Visit]:
    n_blanks = sum(t.kind is TokenKind.BLANK for t in partial)
    if n_blanks != len(answers):
        raise ArityError(f"{n_blanks} blanks but {len(answers)} answer lists")
    visits: list[Visit] = []
    k = 0
    for tok in partial:
        if tok.kind is TokenKind.BLANK:
            visits.extend(answers[k])
            k += 1
        elif tok.is_visit:
            visits.append(tok.visit)
        else:
            raise ReframeError(f"unexpected {tok.kind.name} token in partial sequence")
    return visits


def first_violation(visits: Sequence[Visit]) -> int | None:
    for i in range(1, len(visits)):
        if visits[i].arrival < visits[i - 1].departure:
            return i
    return None
