"""Command line entry point: ``trajgpt <subcommand> [options]``.

Subcommands: preprocess, synth, train, eval, generate, ablate. Every artifact
is written under ``--out-dir`` next to a ``manifest.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .infer import Decode, DecodeMode, infill, parse_partial
from .metrics import evaluate
from .model import Variant
from .preprocess import (
    ConfigurationError,
    RegionVocabulary,
    SplitMode,
    SplitSpec,
    TimeScaling,
    preprocess,
    read_geolife,
    read_points_csv,
    split,
)
from .synth import generate as synth_generate
from .train import Task, TrainConfig, frozen_eval_instances, set_determinism, train
from .types import read_jsonl, write_jsonl

log = logging.getLogger("trajgpt")

SPLIT_TAGS = {"train": 0, "valid": 1, "test": 2}


class CommandError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _manifest(out: Path, command: str, cfg: RunConfig, seed: int, artifacts: list[str],
              extra: dict | None = None) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "config_hash": cfg.digest(),
        "seed": seed,
        "artifacts": sorted(artifacts),
        "versions": {
            "trajgpt": __version__,
            "python": platform.python_version(),
            "torch": torch.__version__,
            "numpy": np.__version__,
        },
        **(extra or {}),
    })


def _load_dataset(data: str, vocab: str | None, scaling: str | None):
    data_path = Path(data)
    vocab_path = Path(vocab) if vocab else data_path.with_name("vocab.json")
    scaling_path = Path(scaling) if scaling else data_path.with_name("scaling.json")
    sequences = read_jsonl(data_path)
    vocabulary = RegionVocabulary.load(vocab_path)
    ts = TimeScaling(**json.loads(scaling_path.read_text())) if scaling_path.exists() else TimeScaling()
    return sequences, vocabulary, ts


def _split_spec(task: Task, cfg: RunConfig) -> SplitSpec:
    mode = SplitMode.BY_AGENT if task is Task.INFILL else SplitMode.CHRONOLOGICAL
    return SplitSpec(mode=mode, ratios=cfg.ratios, window=cfg.window, mask_prob=cfg.train.mask_prob)


def _train_cfg(args, cfg: RunConfig) -> TrainConfig:
    kw = dataclasses.asdict(cfg.train)
    kw["seed"] = args.seed
    kw["deterministic"] = args.deterministic
    if getattr(args, "task", None):
        kw["task"] = args.task
    if getattr(args, "epochs", None) is not None:
        kw["epochs"] = args.epochs
    return TrainConfig(**kw)


def _fit(args, cfg: RunConfig, variant: Variant, sequences, vocab, scaling):
    tcfg = _train_cfg(args, cfg)
    parts = split(sequences, _split_spec(tcfg.task, cfg), tcfg.seed)
    result = train(cfg.model, variant, parts["train"], parts["valid"], len(vocab), scaling, tcfg)
    meta = {
        "task": tcfg.task.value,
        "seed": tcfg.seed,
        "mask_prob": tcfg.mask_prob,
        "window": cfg.window,
        "ratios": list(cfg.ratios),
        "best_epoch": result.best_epoch,
        "stopped_epoch": result.stopped_epoch,
    }
    return result, parts, tcfg, meta


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args, cfg: RunConfig, out: Path) -> None:
    pcfg = cfg.preprocess
    overrides = {k: getattr(args, k) for k in ("radius", "min_dur", "cell_size")
                 if getattr(args, k) is not None}
    pcfg = dataclasses.replace(pcfg, seed=args.seed, **overrides)
    fmt = args.format or ("csv" if Path(args.input).suffix == ".csv" else "geolife")
    traces = read_points_csv(args.input) if fmt == "csv" else read_geolife(args.input)
    sequences, vocab, scaling = preprocess(traces, pcfg)
    write_jsonl(out / "visits.jsonl", sequences)
    vocab.save(out / "vocab.json")
    _write_json(out / "scaling.json", dataclasses.asdict(scaling))
    _manifest(out, "preprocess", cfg, args.seed, ["visits.jsonl", "vocab.json", "scaling.json"],
              {"n_agents": len(sequences), "n_regions": len(vocab.cells)})


def cmd_synth(args, cfg: RunConfig, out: Path) -> None:
    scfg = dataclasses.replace(cfg.synth, seed=args.seed)
    if args.n_agents is not None:
        scfg = dataclasses.replace(scfg, n_agents=args.n_agents)
    if args.n_days is not None:
        scfg = dataclasses.replace(scfg, n_days=args.n_days)
    vocab, sequences = synth_generate(scfg)
    write_jsonl(out / "visits.jsonl", sequences)
    vocab.save(out / "vocab.json")
    _write_json(out / "scaling.json", dataclasses.asdict(TimeScaling()))
    _manifest(out, "synth", dataclasses.replace(cfg, synth=scfg), args.seed,
              ["visits.jsonl", "vocab.json", "scaling.json"])


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    sequences, vocab, scaling = _load_dataset(args.data, args.vocab, args.scaling)
    variant = Variant(args.variant)
    result, _, _, meta = _fit(args, cfg, variant, sequences, vocab, scaling)
    save_checkpoint(out / "checkpoint.bin", Checkpoint(result.model, vocab, scaling, meta))
    result.write_log(out / "train_log.csv")
    _manifest(out, "train", cfg, args.seed, ["checkpoint.bin", "train_log.csv"], {"variant": variant.value})


def _eval_instances(ckpt: Checkpoint, sequences, which: str, cfg: RunConfig):
    meta = ckpt.meta
    task = Task(meta.get("task", cfg.train.task.value))
    rc = dataclasses.replace(cfg, ratios=tuple(meta.get("ratios", cfg.ratios)),
                             window=meta.get("window", cfg.window))
    tcfg = TrainConfig(task=task, seed=meta.get("seed", 0), mask_prob=meta.get("mask_prob", 0.2))
    if which == "all":
        seqs = sequences
        if task is Task.NEXT:
            seqs = split(sequences, dataclasses.replace(_split_spec(task, rc), ratios=(1.0, 0.0, 0.0)))["train"]
    else:
        seqs = split(sequences, _split_spec(task, rc), tcfg.seed)[which]
    return frozen_eval_instances(seqs, tcfg, SPLIT_TAGS.get(which, 3))


def cmd_eval(args, cfg: RunConfig, out: Path) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    sequences = read_jsonl(args.data)
    instances = _eval_instances(ckpt, sequences, args.split, cfg)
    if not instances:
        raise CommandError(f"split {args.split!r} has no evaluable instances")
    report = evaluate(ckpt.model, instances, ckpt.scaling, ckpt.model.cfg.batch_size)
    report.write_json(out / "metrics.json")
    report.write_csv(out / "metrics.csv")
    _manifest(out, "eval", cfg, args.seed, ["metrics.json", "metrics.csv"], {"split": args.split})


def cmd_generate(args, cfg: RunConfig, out: Path) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    decode = Decode(DecodeMode(args.decode), args.seed)
    completed, diagnostics = [], []
    with open(args.input) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    for k, rec in enumerate(records):
        agent, tokens = parse_partial(rec)
        result = infill(tokens, ckpt, Decode(decode.mode, args.seed + k), args.max_per_blank, agent)
        completed.append(result.to_json())
        diagnostics.append(result.diagnostics())
    with open(out / "completed.jsonl", "w") as fh:
        for rec in completed:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _write_json(out / "diagnostics.json", diagnostics)
    _manifest(out, "generate", cfg, args.seed, ["completed.jsonl", "diagnostics.json"])


def cmd_ablate(args, cfg: RunConfig, out: Path) -> None:
    sequences, vocab, scaling = _load_dataset(args.data, args.vocab, args.scaling)
    rows = []
    for variant in Variant:
        result, parts, tcfg, meta = _fit(args, cfg, variant, sequences, vocab, scaling)
        ckpt = Checkpoint(result.model, vocab, scaling, meta)
        save_checkpoint(out / f"checkpoint_{variant.value}.bin", ckpt)
        test = frozen_eval_instances(parts["test"], tcfg, SPLIT_TAGS["test"])
        report = evaluate(result.model, test, scaling, cfg.model.batch_size)
        rows.append({"variant": variant.value, **report.as_dict()})
    columns = ["variant"] + [c for c in rows[0] if c != "variant"]
    with open(out / "ablation.csv", "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) if c == "variant" else repr(row[c]) for c in columns) + "\n")
    _write_json(out / "ablation.json", rows)
    _manifest(out, "ablate", cfg, args.seed,
              ["ablation.csv", "ablation.json"] + [f"checkpoint_{v.value}.bin" for v in Variant])


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--deterministic", action="store_true",
                        help="seed everything and force deterministic kernels")
    common.add_argument("--out-dir", default=".", help="directory for all outputs")
    common.add_argument("--threads", type=int, default=None, help="torch intra-op threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trajgpt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="raw GPS points -> visits + vocabulary")
    p.add_argument("--input", required=True, help="GeoLife root or agent,lat,lon,t CSV")
    p.add_argument("--format", choices=["geolife", "csv"])
    p.add_argument("--radius", type=float)
    p.add_argument("--min-dur", type=float)
    p.add_argument("--cell-size", type=float)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic visit sequences")
    p.add_argument("--n-agents", type=int)
    p.add_argument("--n-days", type=int)
    p.set_defaults(func=cmd_synth)

    def data_args(p):
        p.add_argument("--data", required=True, help="visits JSONL")
        p.add_argument("--vocab", help="vocabulary JSON (default: next to --data)")
        p.add_argument("--scaling", help="scaling JSON (default: next to --data)")
        p.add_argument("--task", choices=[t.value for t in Task])
        p.add_argument("--epochs", type=int)

    p = sub.add_parser("train", parents=[common], help="train one model variant")
    data_args(p)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="full")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="teacher-forced metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "valid", "test", "all"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", parents=[common], help="fill blanks in partial sequences")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help='partial JSONL with {"blank": true} entries')
    p.add_argument("--decode", choices=[m.value for m in DecodeMode], default="greedy")
    p.add_argument("--max-per-blank", type=int, default=8)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ablate", parents=[common], help="train and compare all three variants")
    data_args(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.threads:
            torch.set_num_threads(args.threads)
        set_determinism(args.seed, args.deterministic)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, cfg, out)
    except (CommandError, ConfigurationError, CheckpointError, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
