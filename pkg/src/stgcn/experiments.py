"""Desk-scale experiment presets and the multi-seed comparisons built on them."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import SynthParams, synth_dataset
from .graph import builtin_layout
from .model import STGCN, ModelConfig, init_parameters
from .partition import Strategy
from .training import TrainConfig, build_adjacency, evaluate, run_experiment, train

log = logging.getLogger(__name__)

# A quarter-width network: same nine units, strides and kernel, 16/32/64 channels.
DESK_MODEL = ModelConfig(channels=(16, 16, 16, 32, 32, 32, 64, 64, 64), dropout=0.0)
DESK_TRAIN = TrainConfig(base_lr=0.01, decay_every=20, batch_size=8, epochs=25, fragment_window=32)
DESK_DATA = SynthParams(num_classes=3, samples_per_class=22, num_frames=64)
DESK_SAMPLES = 64


def desk_split(seed: int, params: SynthParams = DESK_DATA, samples: int = DESK_SAMPLES):
    """Seeded synthetic train and val splits of ``samples`` sequences each."""
    _, tr = synth_dataset(params, 1000 + seed, "train")
    _, va = synth_dataset(params, 2000 + seed, "val")
    return tr[:samples], va[:samples]


@dataclass
class SeedRun:
    strategy: str
    seed: int
    edge_importance: bool
    val_top1: float
    mask_deviation: float
    seconds: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def desk_run(strategy, seed: int, edge_importance: bool = False, model: ModelConfig = DESK_MODEL,
             config: TrainConfig = DESK_TRAIN) -> SeedRun:
    strategy = Strategy.parse(strategy)
    tr, va = desk_split(seed)
    t0 = time.perf_counter()
    result = run_experiment(builtin_layout(DESK_DATA.layout), strategy, tr, va, DESK_DATA.num_classes,
                            replace(model, edge_importance=edge_importance), replace(config, seed=seed))
    dev = max(float(np.abs(m - 1).max()) for m in result.net.masks())
    run = SeedRun(strategy.value, seed, edge_importance, result.history[-1]["val_top1"], dev,
                  time.perf_counter() - t0)
    log.info("%s seed %d masks %s: val@1 %.3f (%.0f s)", run.strategy, seed, edge_importance, run.val_top1, run.seconds)
    return run


def mean_top1(runs: list[SeedRun]) -> float:
    return float(np.mean([r.val_top1 for r in runs]))


def overfit_run(seed: int = 0, max_epochs: int = 200, target: float = 0.99) -> dict:
    """Train a 2-class, 8-sample set at a constant lr of 0.01 until eval-mode train top-1 reaches ``target``."""
    params = replace(DESK_DATA, num_classes=2, samples_per_class=4)
    _, seqs = synth_dataset(params, 3000 + seed, "train")
    layout = builtin_layout(params.layout)
    pa, _ = build_adjacency(layout, Strategy.SPATIAL, seqs)
    net = STGCN(2, pa, DESK_MODEL)
    init_parameters(net, seed)
    config = TrainConfig(base_lr=0.01, decay_every=max_epochs, batch_size=8, epochs=max_epochs, seed=seed)
    reached: dict = {}

    def check(record):
        acc = evaluate(net, seqs, 1)["top1"]
        if acc >= target:
            reached.update(epoch=record["epoch"], top1=acc)
            return True
        return False

    t0 = time.perf_counter()
    history = train(net, seqs, None, config, on_epoch=check)
    final = reached.get("top1", evaluate(net, seqs, 1)["top1"])
    return {"reached": bool(reached), "epochs": len(history), "train_top1": final,
            "seconds": time.perf_counter() - t0}
