"""Visits, tokens and the reframed-sequence container shared across the package.

Timestamps are integer seconds since the dataset epoch (the oldest arrival after
rebasing). Planar coordinates are meters in the local projection.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class MalformedSequenceError(ValueError):
    pass


@dataclass(frozen=True)
class Visit:
    region: int
    arrival: int
    departure: int
    x: float = 0.0
    y: float = 0.0

    def __post_init__(self):
        if self.departure < self.arrival:
            raise MalformedSequenceError(
                f"departure {self.departure} precedes arrival {self.arrival}"
            )
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise MalformedSequenceError("visit coordinates must be finite")

    def to_json(self) -> dict:
        return {
            "region": self.region,
            "arrival": self.arrival,
            "departure": self.departure,
            "x": self.x,
            "y": self.y,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Visit":
        return cls(
            region=int(obj["region"]),
            arrival=int(obj["arrival"]),
            departure=int(obj["departure"]),
            x=float(obj.get("x", 0.0)),
            y=float(obj.get("y", 0.0)),
        )


def travel_time(prev: Visit, cur: Visit) -> int:
    """Seconds between leaving ``prev`` and arriving at ``cur``."""
    dt = cur.arrival - prev.departure
    if dt < 0:
        raise MalformedSequenceError(
            f"negative travel time: arrival {cur.arrival} < departure {prev.departure}"
        )
    return dt


def duration(v: Visit) -> int:
    return v.departure - v.arrival


def check_chronological(visits: Sequence[Visit]) -> None:
    for i in range(1, len(visits)):
        if visits[i].arrival < visits[i - 1].departure:
            raise MalformedSequenceError(
                f"visit {i} arrives at {visits[i].arrival} before visit {i - 1} "
                f"departs at {visits[i - 1].departure}"
            )


@dataclass(frozen=True)
class VisitSequence:
    agent: str
    visits: tuple[Visit, ...]

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(self.visits))
        if not self.visits:
            raise MalformedSequenceError(f"agent {self.agent!r} has no visits")
        check_chronological(self.visits)

    def __len__(self) -> int:
        return len(self.visits)

    def __iter__(self) -> Iterator[Visit]:
        return iter(self.visits)

    def to_json(self) -> dict:
        return {"agent": self.agent, "visits": [v.to_json() for v in self.visits]}

    @classmethod
    def from_json(cls, obj: dict) -> "VisitSequence":
        return cls(str(obj["agent"]), tuple(Visit.from_json(v) for v in obj["visits"]))


class TokenKind(enum.Enum):
    VISIT = "visit"
    BLANK = "blank"
    SEP = "sep"
    ANS = "ans"
    PAD = "pad"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    visit: Visit | None = None

    def __post_init__(self):
        if (self.kind is TokenKind.VISIT) != (self.visit is not None):
            raise ValueError(f"token kind {self.kind.value} inconsistent with payload")

    @property
    def is_visit(self) -> bool:
        return self.kind is TokenKind.VISIT

    def __repr__(self) -> str:
        if self.visit is None:
            return self.kind.name
        return f"Token(r={self.visit.region}, {self.visit.arrival}-{self.visit.departure})"


BLANK = Token(TokenKind.BLANK)
SEP = Token(TokenKind.SEP)
ANS = Token(TokenKind.ANS)
PAD = Token(TokenKind.PAD)


def visit_token(v: Visit) -> Token:
    return Token(TokenKind.VISIT, v)


@dataclass(frozen=True)
class ReframedSequence:
    """Partial sequence with BLANKs, then SEP, then one answer span per blank.

    ``answer_spans[k]`` is the half-open index range ``(start, end)`` of the
    visits answering blank ``k``; ``tokens[end]`` is the closing ANS.
    """

    tokens: tuple[Token, ...]
    blank_positions: tuple[int, ...]
    sep_position: int
    answer_spans: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        kinds = [t.kind for t in self.tokens]
        if kinds.count(TokenKind.SEP) != 1 or kinds[self.sep_position] is not TokenKind.SEP:
            raise ValueError("reframed sequence needs exactly one SEP")
        if kinds.count(TokenKind.BLANK) != kinds.count(TokenKind.ANS):
            raise ValueError("BLANK and ANS counts differ")
        if TokenKind.ANS in kinds[: self.sep_position]:
            raise ValueError("ANS before SEP")
        if len(self.answer_spans) != len(self.blank_positions):
            raise ValueError("one answer span per blank required")
        for start, end in self.answer_spans:
            if end <= start or kinds[end] is not TokenKind.ANS:
                raise ValueError(f"answer span {(start, end)} is empty or not ANS-terminated")

    @property
    def partial(self) -> tuple[Token, ...]:
        return self.tokens[: self.sep_position]

    def answers(self) -> list[list[Visit]]:
        return [
            [t.visit for t in self.tokens[start:end]] for start, end in self.answer_spans
        ]


def read_jsonl(path: str | Path) -> list[VisitSequence]:
    with open(path) as fh:
        return [VisitSequence.from_json(json.loads(line)) for line in fh if line.strip()]


def write_jsonl(path: str | Path, sequences: Iterable[VisitSequence]) -> None:
    with open(path, "w") as fh:
        for seq in sequences:
            fh.write(json.dumps(seq.to_json(), sort_keys=True) + "\n")
