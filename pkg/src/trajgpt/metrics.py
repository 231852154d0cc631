"""Teacher-forced evaluation: Acc@k over regions and P±t for arrival/departure."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import gmm
from .batching import Instance, collate, iterate_batches
from .model import TrajGPT, Variant
from .preprocess import SpecialToken, TimeScaling

ACC_KS = (1, 5, 10, 20)
TOLERANCES = (5, 10, 20)


class PredictionMode(enum.Enum):
    SCALAR = "scalar"
    DISTRIBUTION = "distribution"


def top_k_ids(probs: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k largest entries per row; ties go to the smaller id."""
    order = np.argsort(-np.asarray(probs), axis=-1, kind="stable")
    return order[..., :k]


def acc_at_k(probs, truths, k: int) -> float:
    probs = np.asarray(probs, dtype=float)
    truths = np.asarray(truths)
    if k > probs.shape[-1]:
        raise ValueError(f"k={k} exceeds the number of classes {probs.shape[-1]}")
    if len(truths) == 0:
        return float("nan")
    hits = (top_k_ids(probs, k) == truths[:, None]).any(axis=1)
    return float(hits.mean())


def p_within(pred, truth_minutes, t_minutes: float, mode: PredictionMode,
             minutes_per_unit: float = 1.0) -> float:
    """Share (SCALAR) or mean probability (DISTRIBUTION) within ``truth ± t`` minutes.

    SCALAR ``pred`` is in minutes; negative predictions count as 0.
    DISTRIBUTION ``pred`` is a mixture in head units, ``minutes_per_unit``
    converts the interval.
    """
    g = torch.as_tensor(np.asarray(truth_minutes, dtype=float))
    if g.numel() == 0:
        return float("nan")
    if mode is PredictionMode.SCALAR:
        p = torch.as_tensor(np.asarray(pred, dtype=float)).clamp_min(0.0)
        return float(((p - g).abs() <= t_minutes).double().mean())
    params = gmm.GaussianMixtureParams(
        pred.weights.double(), pred.means.double(), pred.scales.double()
    )
    lo = (g - t_minutes) / minutes_per_unit
    hi = (g + t_minutes) / minutes_per_unit
    return float(gmm.interval_prob_clipped(params, lo, hi).mean())


@dataclass
class MetricsReport:
    acc: dict[int, float] = field(default_factory=dict)
    arrival: dict[int, float] = field(default_factory=dict)
    departure: dict[int, float] = field(default_factory=dict)
    n_region: int = 0
    n_temporal: int = 0

    def rows(self) -> list[tuple[str, float, int]]:
        out = [(f"acc@{k}", v, self.n_region) for k, v in self.acc.items()]
        out += [(f"arrival_p{t}", v, self.n_temporal) for t, v in self.arrival.items()]
        out += [(f"departure_p{t}", v, self.n_temporal) for t, v in self.departure.items()]
        return out

    def as_dict(self) -> dict:
        return {name: value for name, value, _ in self.rows()} | {
            "n_region": self.n_region,
            "n_temporal": self.n_temporal,
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value", "count"])
            for name, value, count in self.rows():
                w.writerow([name, repr(float(value)), count])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), sort_keys=True, indent=1) + "\n")


@dataclass
class Predictions:
    """Teacher-forced outputs gathered over evaluated positions."""

    region_probs: np.ndarray      # (N, R) over region ids UNK..V-1
    region_truth: np.ndarray      # (N,) column index into region_probs
    travel: gmm.GaussianMixtureParams | np.ndarray
    duration: gmm.GaussianMixtureParams | np.ndarray
    travel_truth_min: np.ndarray
    duration_truth_min: np.ndarray


@torch.no_grad()
def collect_predictions(model: TrajGPT, instances: Sequence[Instance], scaling: TimeScaling,
                        batch_size: int = 64) -> Predictions:
    model.eval()
    first = int(SpecialToken.UNK)
    probs, truth = [], []
    tt_parts, dd_parts, tt_true, dd_true = [], [], [], []
    unit = model.cfg.encoder.time_unit
    for chunk in iterate_batches(instances, batch_size):
        batch = collate(chunk, scaling, unit)
        out = model(batch)
        rmask = batch.region_eval_mask
        p = torch.softmax(out.region_logits[rmask][:, first:].double(), dim=-1)
        probs.append(p.numpy())
        truth.append((batch.tgt_ids[rmask] - first).numpy())
        tmask = batch.temporal_mask
        tt_parts.append(out.travel[tmask])
        dd_parts.append(out.duration[tmask])
        tt_true.append(scaling.travel_minutes(batch.tgt_travel[tmask].numpy()))
        dd_true.append(scaling.duration_minutes(batch.tgt_duration[tmask].numpy()))

    def cat(parts):
        if model.variant is Variant.REGRESSION:
            return torch.cat(parts).double().numpy()
        return gmm.GaussianMixtureParams(
            torch.cat([p.weights for p in parts]).double(),
            torch.cat([p.means for p in parts]).double(),
            torch.cat([p.scales for p in parts]).double(),
        )

    return Predictions(
        region_probs=np.concatenate(probs),
        region_truth=np.concatenate(truth),
        travel=cat(tt_parts),
        duration=cat(dd_parts),
        travel_truth_min=np.concatenate(tt_true),
        duration_truth_min=np.concatenate(dd_true),
    )


def report_from_predictions(pred: Predictions, scaling: TimeScaling) -> MetricsReport:
    n_classes = pred.region_probs.shape[1]
    report = MetricsReport(n_region=len(pred.region_truth), n_temporal=len(pred.travel_truth_min))
    for k in ACC_KS:
        report.acc[k] = acc_at_k(pred.region_probs, pred.region_truth, min(k, n_classes))
    if isinstance(pred.travel, np.ndarray):
        tt_min = scaling.travel_minutes(pred.travel)
        dd_min = scaling.duration_minutes(pred.duration)
        for t in TOLERANCES:
            report.arrival[t] = p_within(tt_min, pred.travel_truth_min, t, PredictionMode.SCALAR)
            report.departure[t] = p_within(dd_min, pred.duration_truth_min, t, PredictionMode.SCALAR)
    else:
        tt_unit = scaling.travel_minutes(1.0)
        dd_unit = scaling.duration_minutes(1.0)
        for t in TOLERANCES:
            report.arrival[t] = p_within(pred.travel, pred.travel_truth_min, t,
                                         PredictionMode.DISTRIBUTION, tt_unit)
            report.departure[t] = p_within(pred.duration, pred.duration_truth_min, t,
                                           PredictionMode.DISTRIBUTION, dd_unit)
    return report


def evaluate(model: TrajGPT, instances: Sequence[Instance], scaling: TimeScaling,
             batch_size: int = 64) -> MetricsReport:
    return report_from_predictions(collect_predictions(model, instances, scaling, batch_size), scaling)
