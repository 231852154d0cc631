"""Checkpoint container: magic, version, a JSON header, then raw tensor bytes.

Layout::

    b"TRAJGPT\\0" | u32 version | u64 header length | header (UTF-8 JSON) | data

The header holds the model config, variant, vocabulary, time scaling, free
metadata, and per-tensor ``dtype``/``shape``/``offset``/``nbytes``. Output is
byte-stable for identical inputs (sorted keys, fixed tensor order).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .encoders import EncoderConfig
from .model import ModelConfig, TrajGPT, Variant
from .preprocess import RegionVocabulary, TimeScaling

MAGIC = b"TRAJGPT\0"
FORMAT_VERSION = 1

_DTYPES = {torch.float32: "float32", torch.float64: "float64", torch.int64: "int64"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: TrajGPT
    vocab: RegionVocabulary
    scaling: TimeScaling = field(default_factory=TimeScaling)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    state = ckpt.model.state_dict()
    tensors = {}
    chunks = []
    offset = 0
    for name in sorted(state):
        t = state[name].detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        raw = t.numpy().tobytes()
        tensors[name] = {
            "dtype": _DTYPES[t.dtype],
            "shape": list(t.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.model.cfg.to_dict(),
        "variant": ckpt.model.variant.value,
        "vocab_size": ckpt.model.vocab_size,
        "vocab": ckpt.vocab.to_json(),
        "scaling": asdict(ckpt.scaling),
        "meta": ckpt.meta,
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def read_header(path: str | Path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(data[start : start + hlen])
    return header, data[start + hlen :]


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, payload = read_header(path)
    cfg_dict = dict(header["config"])
    cfg_dict["encoder"] = EncoderConfig(**cfg_dict["encoder"])
    cfg = ModelConfig(**cfg_dict)
    model = TrajGPT(cfg, header["vocab_size"], Variant(header["variant"]))
    expected = model.state_dict()
    if set(expected) != set(header["tensors"]):
        missing = sorted(set(expected) - set(header["tensors"]))
        extra = sorted(set(header["tensors"]) - set(expected))
        raise CheckpointError(f"tensor names differ: missing={missing} unexpected={extra}")
    state = {}
    for name, spec in header["tensors"].items():
        if list(expected[name].shape) != spec["shape"]:
            raise CheckpointError(
                f"{name}: stored shape {spec['shape']} != model shape {list(expected[name].shape)}"
            )
        raw = payload[spec["offset"] : spec["offset"] + spec["nbytes"]]
        arr = np.frombuffer(raw, dtype=spec["dtype"]).reshape(spec["shape"])
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(
        model=model,
        vocab=RegionVocabulary.from_json(header["vocab"]),
        scaling=TimeScaling(**header["scaling"]),
        meta=header.get("meta", {}),
    )
