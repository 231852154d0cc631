"""Raw GPS traces to region-discretized visit sequences and task splits.

Pipeline: parse (GeoLife PLT or generic CSV) -> project to a local plane ->
anchor-scan stay points -> square-grid regions -> rebased times -> splits.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .types import MalformedSequenceError, Visit, VisitSequence

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
MAX_EXTENT_M = 500_000.0
PLT_HEADER_LINES = 6

SECONDS_PER_DAY = 86_400
SECONDS_PER_HOUR = 3_600


class ParseError(ValueError):
    pass


class ExtentError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RawPoint:
    lat: float
    lon: float
    t: float

    def __post_init__(self):
        if abs(self.lat) > 90 or abs(self.lon) > 180:
            raise ValueError(f"coordinate out of range: ({self.lat}, {self.lon})")
        if not math.isfinite(self.t):
            raise ValueError("timestamp must be finite")


@dataclass(frozen=True)
class StayPoint:
    x: float
    y: float
    arrival: int
    departure: int


# ---------------------------------------------------------------------------
# Parsing


def parse_plt(text: str | TextIO) -> list[RawPoint]:
    """Parse one GeoLife ``.plt`` file.

    Rows after the 6-line header are ``lat,lon,0,alt,serial_days,date,time``;
    the timestamp is taken from the date and time fields as UTC.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    points = []
    for lineno, line in enumerate(stream, start=1):
        if lineno <= PLT_HEADER_LINES:
            continue
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 7:
            raise ParseError(f"line {lineno}: expected 7 fields, got {len(fields)}")
        try:
            lat, lon = float(fields[0]), float(fields[1])
            stamp = datetime.strptime(f"{fields[5]} {fields[6]}", "%Y-%m-%d %H:%M:%S")
            points.append(RawPoint(lat, lon, stamp.replace(tzinfo=timezone.utc).timestamp()))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
    return points


def read_geolife(root: str | Path) -> dict[str, list[RawPoint]]:
    """Read ``<root>/Data/<agent>/Trajectory/*.plt`` (``root`` may also be the Data dir)."""
    root = Path(root)
    data = root / "Data" if (root / "Data").is_dir() else root
    traces = {}
    for agent_dir in sorted(p for p in data.iterdir() if p.is_dir()):
        points = []
        for plt in sorted((agent_dir / "Trajectory").glob("*.plt")):
            with open(plt) as fh:
                points.extend(parse_plt(fh))
        if points:
            points.sort(key=lambda p: p.t)
            traces[agent_dir.name] = points
    return traces


def read_points_csv(path: str | Path) -> dict[str, list[RawPoint]]:
    """Read a generic ``agent,lat,lon,t`` CSV (``t`` in UTC epoch seconds)."""
    traces: dict[str, list[RawPoint]] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                point = RawPoint(float(row["lat"]), float(row["lon"]), float(row["t"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            traces.setdefault(row["agent"], []).append(point)
    for points in traces.values():
        points.sort(key=lambda p: p.t)
    return dict(sorted(traces.items()))


# ---------------------------------------------------------------------------
# Geometry


def project(points: Sequence[RawPoint], ref: tuple[float, float]) -> np.ndarray:
    """Equirectangular tangent-plane projection around ``ref`` = (lat, lon).

    Returns an ``(n, 2)`` array of ``(x, y)`` meters east/north of ``ref``.
    """
    if not points:
        return np.zeros((0, 2))
    lat = np.radians([p.lat for p in points])
    lon = np.radians([p.lon for p in points])
    lat0, lon0 = math.radians(ref[0]), math.radians(ref[1])
    x = EARTH_RADIUS_M * math.cos(lat0) * (lon - lon0)
    y = EARTH_RADIUS_M * (lat - lat0)
    xy = np.stack([x, y], axis=1)
    far = np.hypot(x, y) > MAX_EXTENT_M
    if far.any():
        raise ExtentError(
            f"{int(far.sum())} points lie more than {MAX_EXTENT_M / 1000:.0f} km from {ref}"
        )
    return xy


def detect_stay_points(
    xy: np.ndarray, t: Sequence[float], radius: float = 200.0, min_dur: float = 600.0
) -> list[StayPoint]:
    """Anchor-distance stay-point scan.

    From anchor ``i`` the window grows while points stay within ``radius`` of
    the anchor. A window spanning at least ``min_dur`` seconds becomes a stay
    at the window centroid and scanning resumes after it; otherwise the anchor
    advances by one.
    """
    xy = np.asarray(xy, dtype=float)
    t = np.asarray(t, dtype=float)
    n = len(t)
    stays = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and math.hypot(*(xy[j + 1] - xy[i])) <= radius:
            j += 1
        if t[j] - t[i] >= min_dur and j > i:
            cx, cy = xy[i : j + 1].mean(axis=0)
            stays.append(StayPoint(float(cx), float(cy), int(round(t[i])), int(round(t[j]))))
            i = j + 1
        else:
            i += 1
    return stays


def repair_overlaps(stays: Sequence[StayPoint]) -> tuple[list[StayPoint], int]:
    """Truncate a departure that runs past the next arrival. Returns (stays, n_repaired)."""
    stays = sorted(stays, key=lambda s: (s.arrival, s.departure))
    out: list[StayPoint] = []
    repaired = 0
    for s in stays:
        if out and out[-1].departure > s.arrival:
            prev = out[-1]
            out[-1] = StayPoint(prev.x, prev.y, prev.arrival, max(prev.arrival, s.arrival))
            repaired += 1
        out.append(s)
    return out, repaired


# ---------------------------------------------------------------------------
# Regions


class SpecialToken(enum.IntEnum):
    PAD = 0
    BLANK = 1
    SEP = 2
    ANS = 3
    UNK = 4


N_SPECIAL = len(SpecialToken)


@dataclass(frozen=True)
class RegionVocabulary:
    """Square-grid cells <-> contiguous ids.

    Ids ``0..4`` are PAD, BLANK, SEP, ANS, UNK; known cells follow in sorted
    ``(ix, iy)`` order. UNK stands for any cell not seen while building.
    """

    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)
    cells: tuple[tuple[int, int], ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(tuple(c) for c in self.cells))
        index = {cell: N_SPECIAL + k for k, cell in enumerate(self.cells)}
        if len(index) != len(self.cells):
            raise ValueError("duplicate cells in vocabulary")
        object.__setattr__(self, "_index", index)

    @classmethod
    def build(cls, locations: Iterable[tuple[float, float]], cell_size: float,
              origin: tuple[float, float] = (0.0, 0.0)) -> "RegionVocabulary":
        probe = cls(cell_size, origin)
        cells = sorted({probe.cell_of(x, y) for x, y in locations})
        return cls(cell_size, origin, tuple(cells))

    def __len__(self) -> int:
        return N_SPECIAL + len(self.cells)

    @property
    def unk_id(self) -> int:
        return int(SpecialToken.UNK)

    @property
    def special_ids(self) -> dict[str, int]:
        return {tok.name: int(tok) for tok in SpecialToken}

    @property
    def region_ids(self) -> range:
        """Ids a visit may carry (UNK included)."""
        return range(int(SpecialToken.UNK), len(self))

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (
            math.floor((x - self.origin[0]) / self.cell_size),
            math.floor((y - self.origin[1]) / self.cell_size),
        )

    def lookup(self, x: float, y: float) -> int:
        return self._index.get(self.cell_of(x, y), self.unk_id)

    def id_of_cell(self, cell: tuple[int, int]) -> int:
        return self._index.get(tuple(cell), self.unk_id)

    def cell_of_id(self, region: int) -> tuple[int, int]:
        if not N_SPECIAL <= region < len(self):
            raise KeyError(f"id {region} is not a known region")
        return self.cells[region - N_SPECIAL]

    def centroid(self, region: int) -> tuple[float, float]:
        ix, iy = self.cell_of_id(region)
        return (
            self.origin[0] + (ix + 0.5) * self.cell_size,
            self.origin[1] + (iy + 0.5) * self.cell_size,
        )

    def to_json(self) -> dict:
        return {
            "cell_size": self.cell_size,
            "origin": list(self.origin),
            "cells": [
                {"ix": ix, "iy": iy, "id": N_SPECIAL + k} for k, (ix, iy) in enumerate(self.cells)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RegionVocabulary":
        cells = sorted(obj["cells"], key=lambda c: c["id"])
        for k, c in enumerate(cells):
            if c["id"] != N_SPECIAL + k:
                raise ValueError("vocabulary ids must be contiguous")
        return cls(float(obj["cell_size"]), tuple(obj["origin"]),
                   tuple((c["ix"], c["iy"]) for c in cells))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "RegionVocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def discretize(
    stays_by_agent: dict[str, Sequence[StayPoint]],
    cell_size: float,
    vocab_agents: Iterable[str] | None = None,
    origin: tuple[float, float] = (0.0, 0.0),
) -> tuple[RegionVocabulary, list[VisitSequence]]:
    """Assign grid-cell region ids; the vocabulary only covers ``vocab_agents``."""
    agents = sorted(stays_by_agent)
    vocab_agents = agents if vocab_agents is None else sorted(vocab_agents)
    vocab = RegionVocabulary.build(
        ((s.x, s.y) for a in vocab_agents for s in stays_by_agent[a]), cell_size, origin
    )
    sequences = []
    for agent in agents:
        stays = stays_by_agent[agent]
        if stays:
            visits = tuple(
                Visit(vocab.lookup(s.x, s.y), s.arrival, s.departure, s.x, s.y) for s in stays
            )
            sequences.append(VisitSequence(agent, visits))
    return vocab, sequences


def rediscretize(vocab: RegionVocabulary, seq: VisitSequence) -> VisitSequence:
    return VisitSequence(
        seq.agent,
        tuple(Visit(vocab.lookup(v.x, v.y), v.arrival, v.departure, v.x, v.y) for v in seq),
    )


# ---------------------------------------------------------------------------
# Time normalization


@dataclass(frozen=True)
class TimeScaling:
    """Rebasing offset and the units the temporal heads work in."""

    epoch: int = 0
    duration_unit: float = SECONDS_PER_DAY
    travel_unit: float = SECONDS_PER_HOUR

    def duration_target(self, seconds: float) -> float:
        return seconds / self.duration_unit

    def travel_target(self, seconds: float) -> float:
        return seconds / self.travel_unit

    def duration_minutes(self, scaled: float) -> float:
        return scaled * self.duration_unit / 60.0

    def travel_minutes(self, scaled: float) -> float:
        return scaled * self.travel_unit / 60.0


def normalize_times(sequences: Sequence[VisitSequence]) -> tuple[list[VisitSequence], TimeScaling]:
    """Shift all timestamps so the dataset's oldest arrival becomes 0."""
    if not sequences:
        return [], TimeScaling()
    epoch = min(seq.visits[0].arrival for seq in sequences)
    rebased = [
        VisitSequence(
            seq.agent,
            tuple(Visit(v.region, v.arrival - epoch, v.departure - epoch, v.x, v.y) for v in seq),
        )
        for seq in sequences
    ]
    return rebased, TimeScaling(epoch=epoch)


# ---------------------------------------------------------------------------
# Splits


class SplitMode(enum.Enum):
    BY_AGENT = "by_agent"
    CHRONOLOGICAL = "chronological"


@dataclass(frozen=True)
class SplitSpec:
    mode: SplitMode = SplitMode.BY_AGENT
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    window: int = 128
    mask_prob: float = 0.2

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9 or min(self.ratios) < 0:
            raise ConfigurationError(f"split ratios must be non-negative and sum to 1: {self.ratios}")
        if self.window < 2:
            raise ConfigurationError("window must be at least 2")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigurationError("mask_prob must lie in [0, 1]")


def _split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    n_valid = int(n * ratios[1] + 1e-9)
    n_test = int(n * ratios[2] + 1e-9)
    return n - n_valid - n_test, n_valid, n_test


def rolling_windows(seq: VisitSequence, window: int) -> list[VisitSequence]:
    """Stride-1 windows; a sequence shorter than ``window`` yields itself once."""
    n = len(seq)
    if n < 2:
        return []
    if n <= window:
        return [VisitSequence(f"{seq.agent}#0", seq.visits)]
    return [
        VisitSequence(f"{seq.agent}#{k}", seq.visits[k : k + window]) for k in range(n - window + 1)
    ]


def split_agents(
    agents: Iterable[str], ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> dict[str, list[str]]:
    agents = sorted(agents)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(agents))
    n_train, n_valid, n_test = _split_counts(len(agents), ratios)
    if min(n_train, n_valid, n_test) == 0:
        raise ConfigurationError(
            f"{len(agents)} agents cannot fill a {tuple(ratios)} split; need at least 10"
        )
    shuffled = [agents[k] for k in order]
    return {
        "train": shuffled[:n_train],
        "valid": shuffled[n_train : n_train + n_valid],
        "test": shuffled[n_train + n_valid :],
    }


def split(
    sequences: Sequence[VisitSequence], spec: SplitSpec, seed: int = 0
) -> dict[str, list[VisitSequence]]:
    """BY_AGENT: seeded shuffle of agents. CHRONOLOGICAL: windows sorted by last arrival."""
    if spec.mode is SplitMode.BY_AGENT:
        by_agent = {seq.agent: seq for seq in sequences}
        parts = split_agents(by_agent, spec.ratios, seed)
        return {name: [by_agent[a] for a in members] for name, members in parts.items()}

    instances = []
    for seq in sorted(sequences, key=lambda s: s.agent):
        for k, win in enumerate(rolling_windows(seq, spec.window)):
            instances.append((win.visits[-1].arrival, seq.agent, k, win))
    instances.sort(key=lambda item: item[:3])
    ordered = [item[3] for item in instances]
    n_train, n_valid, _ = _split_counts(len(ordered), spec.ratios)
    return {
        "train": ordered[:n_train],
        "valid": ordered[n_train : n_train + n_valid],
        "test": ordered[n_train + n_valid :],
    }


# ---------------------------------------------------------------------------
# End-to-end


@dataclass
class PreprocessConfig:
    radius: float = 200.0
    min_dur: float = 600.0
    cell_size: float = 1200.0
    ref: tuple[float, float] | None = None
    vocab_from_train_agents: bool = True
    seed: int = 0


def preprocess(
    traces: dict[str, Sequence[RawPoint]], cfg: PreprocessConfig = PreprocessConfig()
) -> tuple[list[VisitSequence], RegionVocabulary, TimeScaling]:
    """Raw traces -> rebased, discretized visit sequences."""
    traces = {a: pts for a, pts in sorted(traces.items()) if pts}
    if not traces:
        return [], RegionVocabulary(cfg.cell_size), TimeScaling()
    if cfg.ref is None:
        lat = np.mean([p.lat for pts in traces.values() for p in pts])
        lon = np.mean([p.lon for pts in traces.values() for p in pts])
        ref = (float(lat), float(lon))
    else:
        ref = cfg.ref

    stays_by_agent = {}
    total_repaired = 0
    for agent, pts in traces.items():
        xy = project(pts, ref)
        stays = detect_stay_points(xy, [p.t for p in pts], cfg.radius, cfg.min_dur)
        stays, repaired = repair_overlaps(stays)
        total_repaired += repaired
        if stays:
            stays_by_agent[agent] = stays
    if total_repaired:
        log.info("repaired %d overlapping visits", total_repaired)

    vocab_agents = None
    if cfg.vocab_from_train_agents:
        try:
            vocab_agents = split_agents(stays_by_agent, seed=cfg.seed)["train"]
        except ConfigurationError:
            log.warning("too few agents for an agent split; vocabulary covers all agents")
    vocab, sequences = discretize(stays_by_agent, cfg.cell_size, vocab_agents)
    sequences, scaling = normalize_times(sequences)
    return sequences, vocab, scaling


__all__ = [
    "ConfigurationError",
    "ExtentError",
    "MalformedSequenceError",
    "ParseError",
    "PreprocessConfig",
    "RawPoint",
    "RegionVocabulary",
    "SpecialToken",
    "SplitMode",
    "SplitSpec",
    "StayPoint",
    "TimeScaling",
    "detect_stay_points",
    "discretize",
    "normalize_times",
    "parse_plt",
    "preprocess",
    "project",
    "read_geolife",
    "read_points_csv",
    "repair_overlaps",
    "rolling_windows",
    "split",
    "split_agents",
]
