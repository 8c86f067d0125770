"""``stgcn`` command line: train, eval, inspect, selftest and synth.

Machine-readable JSON goes to stdout, progress logs to stderr. Every file a
command writes is replaced atomically, so reruns with the same inputs
overwrite cleanly.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DataError, DatasetManifest, SynthParams, atomic_write_text, synth_dataset, write_dataset
from .engine import ShapeError
from .graph import JointLayout, LayoutError, build_graph, resolve_layout
from .model import ModelConfig
from .partition import DEFAULT_ALPHA, GravityStats, PartitionError, Strategy, compute_gravity_stats, decompose_adjacency, degree_summary
from .training import (
    CheckpointError, TrainConfig, TrainingError, evaluate, load_checkpoint,
    model_from_checkpoint, run_experiment, save_checkpoint,
)

log = logging.getLogger("stgcn")

STRATEGY_CHOICES = {"uni": Strategy.UNI, "distance": Strategy.DISTANCE, "spatial": Strategy.SPATIAL}


class ConfigError(ValueError):
    pass


USER_ERRORS = (ConfigError, LayoutError, PartitionError, DataError, TrainingError, CheckpointError,
               ShapeError, ValueError, OSError)


@dataclass
class ExperimentConfig:
    layout: str = "openpose18"
    strategy: str = "spatial"
    seed: int = 0
    train_manifest: str | None = None
    val_manifest: str | None = None
    checkpoint: str = "stgcn.ckpt"
    history: str = "history.jsonl"
    figures: str | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg = cls(**doc)
        # relative paths in a config file are relative to that file
        base = path.parent
        for key in ("train_manifest", "val_manifest", "checkpoint", "history", "figures"):
            value = getattr(cfg, key)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, key, str(base / value))
        if not Path(cfg.layout).is_absolute() and (base / cfg.layout).is_file():
            cfg.layout = str(base / cfg.layout)
        return cfg

    def model_config(self) -> ModelConfig:
        unknown = set(self.model) - set(ModelConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model options: {sorted(unknown)}")
        return ModelConfig.from_dict(self.model)

    def train_config(self) -> TrainConfig:
        opts = dict(self.train)
        opts["seed"] = self.seed
        try:
            return TrainConfig.from_dict(opts)
        except TypeError as exc:
            raise ConfigError(f"bad training options: {exc}") from exc


def parse_strategy(value: str) -> Strategy:
    if value in STRATEGY_CHOICES:
        return STRATEGY_CHOICES[value]
    return Strategy.parse(value)


def emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    sys.stdout.flush()


def write_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_split(path: str, layout: JointLayout, what: str):
    manifest = DatasetManifest.load(path)
    if manifest.layout != layout.name:
        raise DataError(f"{what} manifest {path} uses layout {manifest.layout!r}, experiment uses {layout.name!r}")
    if not manifest.items:
        raise DataError(f"{what} manifest {path} lists no samples")
    return manifest, manifest.load_sequences()


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for key, flag in (("layout", args.layout), ("seed", args.seed), ("train_manifest", args.manifest),
                      ("val_manifest", args.val_manifest), ("checkpoint", args.checkpoint),
                      ("history", args.history), ("figures", args.figures)):
        if flag is not None:
            setattr(cfg, key, flag)
    if args.strategy is not None:
        cfg.strategy = args.strategy
    if args.epochs is not None:
        cfg.train = {**cfg.train, "epochs": args.epochs}
    if args.out is not None:
        out = Path(args.out)
        if args.checkpoint is None:
            cfg.checkpoint = str(out / "stgcn.ckpt")
        if args.history is None:
            cfg.history = str(out / "history.jsonl")

    strategy = parse_strategy(cfg.strategy)
    layout = resolve_layout(cfg.layout)
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    if cfg.train_manifest is None:
        if strategy is Strategy.SPATIAL:
            raise ConfigError("spatial_configuration needs gravity stats (r_i), which come from a training "
                              "split; no train manifest was given")
        raise ConfigError("no train manifest was given")
    train_manifest, train_seqs = load_split(cfg.train_manifest, layout, "train")
    val_seqs = None
    if cfg.val_manifest is not None:
        val_manifest, val_seqs = load_split(cfg.val_manifest, layout, "val")
        if val_manifest.classes != train_manifest.classes:
            raise DataError(f"class tables differ between {cfg.train_manifest} and {cfg.val_manifest}")

    log.info("training %s/%s on %d samples (%d classes), seed %d", layout.name, strategy.value,
             len(train_seqs), len(train_manifest.classes), train_cfg.seed)
    result = run_experiment(layout, strategy, train_seqs, val_seqs, len(train_manifest.classes),
                            model_cfg, train_cfg, train_manifest.classes)
    save_checkpoint(result.checkpoint, cfg.checkpoint)
    atomic_write_text(cfg.history, "".join(json.dumps(h, sort_keys=True) + "\n" for h in result.history))
    doc = {"checkpoint": cfg.checkpoint, "history": cfg.history, "strategy": strategy.value,
           "layout": layout.name, "seed": train_cfg.seed, "epochs": train_cfg.epochs,
           "final": result.history[-1] if result.history else None}
    if cfg.figures:
        from . import report

        figs = Path(cfg.figures)
        paths = [report.plot_history(result.history, figs / "history.png"),
                 report.plot_adjacency(result.net.adjacency.data, strategy.value, figs / "adjacency.png",
                                       layout.joint_names, f"{layout.name} / {strategy.value}")]
        if model_cfg.edge_importance:
            paths.append(report.plot_mask_deviation(result.net.masks(), figs / "masks.png"))
        doc["figures"] = [str(p) for p in paths]
    emit(doc)
    return 0


def cmd_eval(args) -> int:
    if args.checkpoint is None or args.manifest is None:
        raise ConfigError("eval needs --checkpoint and --manifest")
    ckpt = load_checkpoint(args.checkpoint)
    stored = JointLayout.from_dict(ckpt.layout)
    layout = resolve_layout(args.layout) if args.layout else stored
    net = model_from_checkpoint(ckpt, layout)
    _, seqs = load_split(args.manifest, stored, "eval")
    metrics = evaluate(net, seqs, args.topk)
    metrics.update(checkpoint=str(args.checkpoint), manifest=str(args.manifest), strategy=ckpt.strategy,
                   layout=stored.name)
    emit(metrics)
    return 0


def cmd_inspect(args) -> int:
    layout = resolve_layout(args.layout or "openpose18")
    strategy = parse_strategy(args.strategy or "spatial")
    gravity = None
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        if ckpt.layout_name != layout.name:
            raise CheckpointError(f"checkpoint layout {ckpt.layout_name!r} differs from {layout.name!r}")
        gravity = ckpt.gravity
    train_seqs = None
    if args.manifest and gravity is None:
        _, train_seqs = load_split(args.manifest, layout, "train")
    if strategy is Strategy.SPATIAL and gravity is None and train_seqs is None:
        raise PartitionError("spatial_configuration needs gravity stats (r_i); pass --manifest with a training "
                             "split or --checkpoint carrying them")
    stats = None
    if strategy is Strategy.SPATIAL:
        stats = GravityStats(np.asarray(gravity)) if gravity is not None else compute_gravity_stats(train_seqs, layout)
    pa = decompose_adjacency(strategy, build_graph(layout), stats, args.alpha)
    doc = pa.to_json_doc()
    doc["layout"] = layout.name
    doc["degrees"] = degree_summary(pa)
    if stats is not None:
        doc["gravity"] = stats.to_list()
    if args.out:
        write_json(args.out, pa.to_json_doc())
        doc["written"] = str(args.out)
    if args.figures:
        from . import report

        doc["figures"] = [str(report.plot_adjacency(pa.normalized, strategy.value, Path(args.figures) / "adjacency.png",
                                                    layout.joint_names, f"{layout.name} / {strategy.value}"))]
    emit(doc)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    report = run_selftest(inject_fault=args.inject_fault)
    for check in report.checks:
        log.info("%s %s: %s", "ok  " if check.passed else "FAIL", check.name, check.detail)
    log.info("cardinality vs symmetric normalization gap (information only): %.4g", report.normalization_gap)
    emit(report.to_dict())
    return 0 if report.passed else 1


def cmd_synth(args) -> int:
    if args.out is None:
        raise ConfigError("synth needs --out DIR")
    seed = 0 if args.seed is None else args.seed
    layout = resolve_layout(args.layout or "openpose18")
    train_seed, val_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
    params = SynthParams(num_classes=args.classes, samples_per_class=args.samples_per_class,
                         num_frames=args.frames, layout=layout.name, noise=args.noise)
    out = Path(args.out)
    written = {}
    for split, split_seed, per_class in (("train", train_seed, args.samples_per_class),
                                         ("val", val_seed, args.val_per_class or args.samples_per_class)):
        manifest, seqs = synth_dataset(replace(params, samples_per_class=per_class), split_seed, split)
        written[split] = str(write_dataset(manifest, seqs, out))
        log.info("wrote %d %s samples to %s", len(seqs), split, out)
    emit({"train_manifest": written["train"], "val_manifest": written["val"], "classes": manifest.classes,
          "layout": layout.name, "seed": seed})
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stgcn", description="Spatial-temporal graph convolution for skeleton actions.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        if "config" in names:
            p.add_argument("--config", help="JSON experiment config; flags override its fields")
        if "layout" in names:
            p.add_argument("--layout", help="builtin layout name or path to a layout JSON file")
        if "strategy" in names:
            p.add_argument("--strategy", choices=sorted(STRATEGY_CHOICES))
        if "seed" in names:
            p.add_argument("--seed", type=int)
        if "checkpoint" in names:
            p.add_argument("--checkpoint")
        if "manifest" in names:
            p.add_argument("--manifest")
        if "history" in names:
            p.add_argument("--history", help="JSON-lines file with one record per epoch")
        if "out" in names:
            p.add_argument("--out")
        if "figures" in names:
            p.add_argument("--figures", help="directory for PNG figures")

    p = sub.add_parser("train", help="train a model and write checkpoint + history")
    common(p, "config", "layout", "strategy", "seed", "checkpoint", "manifest", "history", "out", "figures")
    p.add_argument("--val-manifest")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1/top-k of a checkpoint on a manifest")
    common(p, "layout", "checkpoint", "manifest")
    p.add_argument("--topk", type=int, default=5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="print the partitioned, normalized adjacency stack")
    common(p, "layout", "strategy", "checkpoint", "manifest", "out", "figures")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("selftest", help="oracle and gradient checks at reduced size")
    p.add_argument("--inject-fault", choices=["partition-of-unity"], help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("synth", help="write a seeded synthetic train/val dataset")
    common(p, "layout", "seed", "out")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--samples-per-class", type=int, default=22)
    p.add_argument("--val-per-class", type=int)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.01)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        log.error("%s", exc)
        emit({"error": type(exc).__name__, "message": str(exc), "command": args.command})
        return 1


if __name__ == "__main__":
    sys.exit(main())
