"""Seeded synthetic mobility: home / work / lunch / recreation routines.

Weekdays run home -> work -> lunch -> work -> home, optionally with an evening
recreation stop before going home. Weekends optionally include a single
recreation outing. Every trip's travel time is drawn from a two-mode normal
mixture (fast mode 1, slow mode 2 with probability ``bimodal_fraction``).

The grid is split into activity zones by row (``iy % 4``), so a region id
determines the activity type. Each agent draws its own Philox stream from
``(seed, agent index)``; a nonzero ``replicate`` keeps the places drawn from
that stream and redraws the schedule from ``(seed, agent index, replicate)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import RegionVocabulary, StayPoint, discretize
from .types import VisitSequence

HOME, WORK, LUNCH, RECREATION = range(4)
MINUTE = 60
HOUR = 3600
DAY = 86_400


@dataclass(frozen=True)
class SynthConfig:
    n_agents: int = 20
    n_days: int = 28
    grid_extent: int = 8
    cell_size: float = 1200.0
    seed: int = 0
    bimodal_fraction: float = 0.5
    mode_params: tuple[tuple[float, float], tuple[float, float]] = ((10.0, 2.0), (40.0, 5.0))
    schedule_noise: float = 10.0  # minutes
    leave_home: float = 8.0       # hours after midnight
    work_hours: float = 8.0       # split evenly around lunch
    lunch_hours: float = 1.0
    recreation_hours: float = 1.5
    evening_recreation_prob: float = 0.0
    weekend_recreation_prob: float = 0.5
    weekend_leave: float = 11.0
    replicate: int = 0            # same agents and places, fresh schedule noise

    def __post_init__(self):
        object.__setattr__(self, "mode_params", tuple(tuple(m) for m in self.mode_params))
        for name in ("bimodal_fraction", "evening_recreation_prob", "weekend_recreation_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if len(self.mode_params) != 2 or any(sd <= 0 for _, sd in self.mode_params):
            raise ValueError("mode_params needs two (mean, std>0) pairs")
        if self.schedule_noise <= 0:
            raise ValueError("schedule_noise must be positive")
        if self.replicate < 0:
            raise ValueError("replicate must be non-negative")
        if self.n_agents < 1 or self.n_days < 1 or self.grid_extent < 4:
            raise ValueError("need n_agents >= 1, n_days >= 1, grid_extent >= 4")


def agent_rng(cfg: SynthConfig, index: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, index, *stream])))


def _zone_cell(cfg: SynthConfig, rng: np.random.Generator, activity: int) -> tuple[int, int]:
    rows = [iy for iy in range(cfg.grid_extent) if iy % 4 == activity]
    return int(rng.integers(cfg.grid_extent)), int(rng.choice(rows))


def _travel_seconds(cfg: SynthConfig, rng: np.random.Generator) -> int:
    slow = rng.random() < cfg.bimodal_fraction
    mean, sd = cfg.mode_params[1 if slow else 0]
    return int(round(max(0.0, rng.normal(mean, sd)) * MINUTE))


def _agent_stays(cfg: SynthConfig, index: int) -> list[StayPoint]:
    rng = agent_rng(cfg, index)
    places = {a: _zone_cell(cfg, rng, a) for a in (HOME, WORK, LUNCH, RECREATION)}
    if cfg.replicate:
        rng = agent_rng(cfg, index, cfg.replicate)
    centre = {
        a: ((ix + 0.5) * cfg.cell_size, (iy + 0.5) * cfg.cell_size)
        for a, (ix, iy) in places.items()
    }
    noise = cfg.schedule_noise * MINUTE
    floor = 10 * MINUTE

    def span(hours: float) -> int:
        return int(round(max(floor, hours * HOUR + rng.normal(0.0, noise))))

    stays: list[StayPoint] = []
    home_arrival = 0
    for day in range(cfg.n_days):
        base = day * DAY
        if day % 7 < 5:
            plan = [(WORK, cfg.work_hours / 2), (LUNCH, cfg.lunch_hours), (WORK, cfg.work_hours / 2)]
            if rng.random() < cfg.evening_recreation_prob:
                plan.append((RECREATION, cfg.recreation_hours))
            leave = cfg.leave_home
        elif rng.random() < cfg.weekend_recreation_prob:
            plan = [(RECREATION, cfg.recreation_hours)]
            leave = cfg.weekend_leave
        else:
            continue
        t = max(home_arrival + floor, base + int(round(leave * HOUR + rng.normal(0.0, noise))))
        stays.append(StayPoint(*centre[HOME], home_arrival, t))
        for activity, hours in plan:
            t += _travel_seconds(cfg, rng)
            end = t + span(hours)
            stays.append(StayPoint(*centre[activity], t, end))
            t = end
        home_arrival = t + _travel_seconds(cfg, rng)
    stays.append(StayPoint(*centre[HOME], home_arrival, max(home_arrival + floor, cfg.n_days * DAY)))
    return stays


def generate(cfg: SynthConfig) -> tuple[RegionVocabulary, list[VisitSequence]]:
    """All agents' visit sequences and the grid vocabulary they were discretized with."""
    stays = {f"agent{k:04d}": _agent_stays(cfg, k) for k in range(cfg.n_agents)}
    return discretize(stays, cfg.cell_size)


def activity_of(vocab: RegionVocabulary, region: int) -> int:
    """Activity type encoded by a synthetic region's grid row."""
    return vocab.cell_of_id(region)[1] % 4


def travel_minutes(sequences) -> np.ndarray:
    return np.array(
        [(b.arrival - a.departure) / MINUTE for seq in sequences for a, b in zip(seq.visits, seq.visits[1:])]
    )


__all__ = ["SynthConfig", "activity_of", "agent_rng", "generate", "travel_minutes"]
