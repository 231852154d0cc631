"""Run configuration read from a TOML file.

Recognized tables (every key optional; unknown keys are rejected)::

    [model]       n_layers, n_heads, ff_dim, gmm_components, dropout, ln_eps,
                  learning_rate, batch_size, max_seq_len, preset ("geolife" | "mobilitysim")
    [encoder]     s2v_scales, s2v_min, s2v_max, t2v_dim, region_emb_dim, time_unit
    [train]       task ("infill" | "next"), epochs, patience, mask_prob,
                  lr_schedule ("constant" | "cosine")
    [split]       ratios, window
    [synth]       any SynthConfig field
    [preprocess]  radius, min_dur, cell_size, ref = [lat, lon]

The seed and the deterministic switch live on the command line.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .encoders import EncoderConfig
from .model import ModelConfig
from .preprocess import ConfigurationError, PreprocessConfig
from .synth import SynthConfig
from .train import Task, TrainConfig


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.geolife)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    window: int = 128

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": {**dataclasses.asdict(self.train), "task": self.train.task.value},
            "synth": dataclasses.asdict(self.synth),
            "preprocess": dataclasses.asdict(self.preprocess),
            "split": {"ratios": list(self.ratios), "window": self.window},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


def _take(section: dict, cls, name: str) -> dict:
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return dict(section)


def from_mapping(doc: dict) -> RunConfig:
    unknown = set(doc) - {"model", "encoder", "train", "split", "synth", "preprocess"}
    if unknown:
        raise ConfigurationError(f"unknown config tables: {sorted(unknown)}")
    model_doc = dict(doc.get("model", {}))
    preset = model_doc.pop("preset", "geolife")
    if preset not in ("geolife", "mobilitysim"):
        raise ConfigurationError(f"unknown model preset {preset!r}")
    base = getattr(ModelConfig, preset)()
    enc = dataclasses.replace(base.encoder, **_take(doc.get("encoder", {}), EncoderConfig, "encoder"))
    model_kw = _take(model_doc, ModelConfig, "model")
    model = dataclasses.replace(base, encoder=enc, **model_kw)

    train_doc = _take(doc.get("train", {}), TrainConfig, "train")
    if "task" in train_doc:
        train_doc["task"] = Task(train_doc["task"])
    split_doc = doc.get("split", {})
    if set(split_doc) - {"ratios", "window"}:
        raise ConfigurationError(f"unknown keys in [split]: {sorted(set(split_doc) - {'ratios', 'window'})}")
    pre_doc = _take(doc.get("preprocess", {}), PreprocessConfig, "preprocess")
    if "ref" in pre_doc:
        pre_doc["ref"] = tuple(pre_doc["ref"])
    return RunConfig(
        model=model,
        train=TrainConfig(**train_doc),
        synth=SynthConfig(**_take(doc.get("synth", {}), SynthConfig, "synth")),
        preprocess=PreprocessConfig(**pre_doc),
        ratios=tuple(split_doc.get("ratios", (0.8, 0.1, 0.1))),
        window=int(split_doc.get("window", 128)),
    )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    return from_mapping(doc)
