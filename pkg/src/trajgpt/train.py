"""Teacher-forced training with dynamic re-masking and early stopping."""

from __future__ import annotations

import copy
import csv
import enum
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .batching import Instance, collate, infill_instances, iterate_batches, next_visit_instance
from .model import ModelConfig, NumericalError, TrajGPT, Variant, joint_nll_loss
from .preprocess import TimeScaling
from .types import VisitSequence

log = logging.getLogger(__name__)


class Task(str, enum.Enum):
    NEXT = "next"
    INFILL = "infill"


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    task: Task = Task.INFILL
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    mask_prob: float = 0.2
    deterministic: bool = True
    # "constant", or "cosine": anneal to zero over ``epochs``
    lr_schedule: str = "constant"

    def __post_init__(self):
        self.task = Task(self.task)
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


def set_determinism(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic)


def epoch_rng(seed: int, *tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *tag])))


class EarlyStopping:
    """Stops once ``patience`` consecutive epochs fail to improve on the best loss."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, value: float, epoch: int) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def build_instances(sequences: Sequence[VisitSequence], task: Task, mask_prob: float,
                    rng: np.random.Generator | None = None) -> list[Instance]:
    if task is Task.NEXT:
        return [next_visit_instance(s) for s in sequences if len(s) >= 2]
    return infill_instances(sequences, mask_prob, rng)


def frozen_eval_instances(sequences, cfg: TrainConfig, tag: int) -> list[Instance]:
    """Validation/test masks drawn once from a fixed stream."""
    return build_instances(sequences, cfg.task, cfg.mask_prob, epoch_rng(cfg.seed, 10_000 + tag))


@torch.no_grad()
def mean_loss(model: TrajGPT, instances: Sequence[Instance], scaling: TimeScaling,
              batch_size: int) -> float:
    model.eval()
    total, count = 0.0, 0
    for chunk in iterate_batches(instances, batch_size):
        out = joint_nll_loss(model, collate(chunk, scaling, model.cfg.encoder.time_unit))
        total += float(out.total) * out.n_positions
        count += out.n_positions
    return total / max(count, 1)


@dataclass
class TrainResult:
    model: TrajGPT
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "valid_loss"])
            for row in self.log:
                w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["valid_loss"])])


def train(model_cfg: ModelConfig, variant: Variant | str, train_seqs: Sequence[VisitSequence],
          valid_seqs: Sequence[VisitSequence], vocab_size: int,
          scaling: TimeScaling = TimeScaling(), cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit a fresh model; returns the best-validation weights and the epoch log.

    Epoch 0 of the log is the untrained model's loss. Without validation
    sequences early stopping watches the training loss.
    """
    set_determinism(cfg.seed, cfg.deterministic)
    model = TrajGPT(model_cfg, vocab_size, variant)
    optim = torch.optim.Adam(model.parameters(), lr=model_cfg.learning_rate)
    unit = model_cfg.encoder.time_unit
    bs = model_cfg.batch_size

    valid = frozen_eval_instances(valid_seqs, cfg, 1) if valid_seqs else []
    probe = build_instances(train_seqs, cfg.task, cfg.mask_prob, epoch_rng(cfg.seed, 0))
    if not probe:
        raise ValueError("no training instances")

    def valid_loss(train_instances):
        return mean_loss(model, valid or train_instances, scaling, bs)

    sched = None
    if cfg.lr_schedule == "cosine":
        steps = cfg.epochs * math.ceil(len(probe) / bs)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(optim, T_max=max(steps, 1))

    initial = mean_loss(model, probe, scaling, bs)
    result = TrainResult(model, [{"epoch": 0, "train_loss": initial, "valid_loss": valid_loss(probe)}])
    stopper = EarlyStopping(cfg.patience)
    best_state = copy.deepcopy(model.state_dict())

    for epoch in range(1, cfg.epochs + 1):
        rng = epoch_rng(cfg.seed, epoch)
        instances = probe if cfg.task is Task.NEXT else build_instances(
            train_seqs, cfg.task, cfg.mask_prob, rng)
        model.train()
        total, count = 0.0, 0
        for b, chunk in enumerate(iterate_batches(instances, bs, rng.permutation(len(instances)))):
            try:
                out = joint_nll_loss(model, collate(chunk, scaling, unit), batch_id=(epoch, b))
            except NumericalError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            optim.zero_grad()
            out.total.backward()
            optim.step()
            if sched is not None:
                sched.step()
            total += float(out.total.detach()) * out.n_positions
            count += out.n_positions
        v = valid_loss(instances)
        result.log.append({"epoch": epoch, "train_loss": total / count, "valid_loss": v})
        log.info("epoch %d train %.4f valid %.4f", epoch, total / count, v)
        stop = stopper.step(v, epoch)
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(model.state_dict())
        result.stopped_epoch = epoch
        if stop:
            break

    model.load_state_dict(best_state)
    model.eval()
    result.best_epoch = stopper.best_epoch
    return result
