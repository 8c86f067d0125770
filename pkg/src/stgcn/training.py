"""SGD training loop, metrics, learning-rate schedule and checkpoint files."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import engine as E
from .data import MovingParams, SkeletonSequence, atomic_write_bytes, random_fragment, random_moving
from .graph import JointLayout, build_graph
from .model import STGCN, ModelConfig, init_parameters
from .partition import GravityStats, PartitionedAdjacency, Strategy, compute_gravity_stats, decompose_adjacency

log = logging.getLogger(__name__)

MAGIC = b"STGCNCKP"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    lr_decay: float = 0.1
    decay_every: int = 10
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    random_moving: bool = False
    fragment_window: int | None = None
    eval_batch_size: int = 32

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be >= 1, got {self.decay_every}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def lr_at(epoch: int, config: TrainConfig = TrainConfig()) -> float:
    """Step schedule: base_lr * decay ** (epoch // decay_every).

    The power is taken in decimal so that 0.01 decayed twice by 0.1 is the
    double nearest 1e-4, not 1.0000000000000002e-4.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    steps = epoch // config.decay_every
    return float(Decimal(repr(config.base_lr)) * Decimal(repr(config.lr_decay)) ** steps)


# ------------------------------------------------------------------ optimizer

def sgd_step(params, lr: float, momentum: float, velocity: dict, weight_decay: float = 0.0) -> None:
    """In-place momentum SGD: v <- momentum*v + g; p <- p - lr*v.

    ``params`` is a sequence of (name, Tensor). Parameters that received no
    gradient are treated as having a zero gradient.
    """
    for name, p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        if weight_decay:
            g = g + weight_decay * p.data
        v = velocity.get(name)
        v = g.copy() if v is None else momentum * v + g
        velocity[name] = v
        p.data -= (lr * v).astype(p.data.dtype)


# ------------------------------------------------------------------ metrics

def topk_correct(logits: np.ndarray, labels, k: int) -> np.ndarray:
    """Per-sample hit flags; ranking is by descending logit, ties to the lower class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    k = min(k, logits.shape[1])
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return np.any(order == labels[:, None], axis=1)


def stack_batch(seqs: list[SkeletonSequence]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.values for s in seqs]).astype(E.get_default_dtype(), copy=False)
    y = np.array([s.label for s in seqs], dtype=np.int64)
    return x, y


def predict(net: STGCN, seqs: list[SkeletonSequence], batch_size: int = 32) -> np.ndarray:
    """Eval-mode logits for every sequence, batching runs of equal length."""
    out = np.zeros((len(seqs), net.num_classes), dtype=np.float64)
    i = 0
    with E.no_grad():
        while i < len(seqs):
            j = i + 1
            while j < len(seqs) and j - i < batch_size and seqs[j].num_frames == seqs[i].num_frames:
                j += 1
            x, _ = stack_batch(seqs[i:j])
            out[i:j] = net(x, training=False).data
            i = j
    return out


def evaluate(net: STGCN, seqs: list[SkeletonSequence], topk: int = 5, batch_size: int = 32) -> dict:
    if not seqs:
        raise TrainingError("cannot evaluate on an empty dataset")
    logits = predict(net, seqs, batch_size)
    labels = np.array([s.label for s in seqs])
    k = min(topk, net.num_classes)
    z = logits - logits.max(axis=1, keepdims=True)
    nll = np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(seqs)), labels]
    result = {
        "samples": len(seqs),
        "loss": float(nll.mean()),
        "top1": float(topk_correct(logits, labels, 1).mean()),
        f"top{topk}": float(topk_correct(logits, labels, k).mean()),
        "k": k,
    }
    if k < topk:
        result["note"] = f"top-{topk} clamped to top-{k}: only {net.num_classes} classes"
    return result


# ------------------------------------------------------------------ checkpoints

@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]
    epoch: int
    num_classes: int
    layout: dict
    strategy: str
    model_config: dict
    train_config: dict = field(default_factory=dict)
    gravity: list[float] | None = None
    alpha: float = 0.001
    classes: list[str] = field(default_factory=list)

    @property
    def layout_name(self) -> str:
        return self.layout["name"]

    def meta(self) -> dict:
        return {
            "epoch": self.epoch, "num_classes": self.num_classes, "layout": self.layout,
            "strategy": self.strategy, "model_config": self.model_config, "train_config": self.train_config,
            "gravity": self.gravity, "alpha": self.alpha, "classes": self.classes,
        }


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Magic, u64 header length, JSON header, then little-endian float32 arrays."""
    tensors, blobs, offset = [], [], 0
    for name in sorted(ckpt.state):
        arr = np.ascontiguousarray(ckpt.state[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"version": FORMAT_VERSION, "meta": ckpt.meta(), "tensors": tensors,
                         "data_bytes": offset}, sort_keys=True).encode()
    atomic_write_bytes(path, MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {header.get('version')} unsupported (expected {FORMAT_VERSION})")
    body = raw[16 + hlen:]
    if len(body) != header["data_bytes"]:
        raise CheckpointError(f"{path}: truncated data ({len(body)} of {header['data_bytes']} bytes)")
    state = {}
    for t in header["tensors"]:
        chunk = body[t["offset"]:t["offset"] + t["nbytes"]]
        state[t["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(t["shape"]).astype(np.float32)
    m = header["meta"]
    return Checkpoint(state, m["epoch"], m["num_classes"], m["layout"], m["strategy"], m["model_config"],
                      m["train_config"], m["gravity"], m["alpha"], m["classes"])


# ------------------------------------------------------------------ assembly

def build_adjacency(layout: JointLayout, strategy, train_seqs=None, gravity=None) -> tuple[PartitionedAdjacency, GravityStats | None]:
    strategy = Strategy.parse(strategy)
    graph = build_graph(layout)
    stats = None
    if strategy is Strategy.SPATIAL:
        if gravity is not None:
            stats = GravityStats(np.asarray(gravity))
        elif train_seqs:
            stats = compute_gravity_stats(train_seqs, layout)
        else:
            raise TrainingError("spatial_configuration needs gravity stats, computed from a training split")
    return decompose_adjacency(strategy, graph, stats), stats


def model_from_checkpoint(ckpt: Checkpoint, layout: JointLayout | None = None) -> STGCN:
    """Rebuild the network; a ``layout`` that differs from the checkpoint's is rejected."""
    stored = JointLayout.from_dict(ckpt.layout)
    if layout is not None and (layout.name != stored.name or layout.num_joints != stored.num_joints):
        raise CheckpointError(
            f"checkpoint was trained on layout {stored.name!r} ({stored.num_joints} joints), "
            f"not {layout.name!r} ({layout.num_joints} joints)"
        )
    pa, _ = build_adjacency(stored, ckpt.strategy, gravity=ckpt.gravity)
    net = STGCN(ckpt.num_classes, pa, ModelConfig.from_dict(ckpt.model_config))
    net.load_state_dict(ckpt.state)
    return net


def _augment(seq: SkeletonSequence, cfg: TrainConfig, rng: np.random.Generator, moving: MovingParams) -> SkeletonSequence:
    if cfg.fragment_window:
        seq = random_fragment(seq, rng, cfg.fragment_window)
    if cfg.random_moving and seq.dims == 2:
        seq = random_moving(seq, rng, moving)
    return seq


def train(
    net: STGCN,
    train_seqs: list[SkeletonSequence],
    val_seqs: list[SkeletonSequence] | None,
    config: TrainConfig,
    moving: MovingParams = MovingParams(),
    on_epoch=None,
) -> list[dict]:
    """Run ``config.epochs`` epochs of shuffled mini-batch SGD; return one record per epoch.

    ``on_epoch(record)`` is called after every epoch; a truthy return stops training early.
    """
    if not train_seqs:
        raise TrainingError("training set is empty")
    for s in train_seqs:
        if s.num_joints != net.V:
            raise TrainingError(f"sequence {s.meta!r} has {s.num_joints} joints, model expects {net.V}")
    shuffle_rng, aug_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3))
    params = net.trainable()
    velocity: dict[str, np.ndarray] = {}
    history = []
    n = len(train_seqs)
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        order = shuffle_rng.permutation(n)
        losses, hits, seen = [], 0, 0
        for start in range(0, n, config.batch_size):
            batch = [_augment(train_seqs[i], config, aug_rng, moving) for i in order[start:start + config.batch_size]]
            x, y = stack_batch(batch)
            net.zero_grad()
            logits = net(x, training=True, rng=drop_rng)
            loss = E.softmax_cross_entropy(logits, y)
            loss.backward()
            sgd_step(params, lr, config.momentum, velocity, config.weight_decay)
            losses.append(loss.item() * len(batch))
            hits += int(topk_correct(logits.data, y, 1).sum())
            seen += len(batch)
        record = {"epoch": epoch, "lr": lr, "train_loss": sum(losses) / seen, "train_top1": hits / seen,
                  "steps": -(-n // config.batch_size)}
        if val_seqs:
            ev = evaluate(net, val_seqs, 5, config.eval_batch_size)
            record.update(val_loss=ev["loss"], val_top1=ev["top1"], val_top5=ev["top5"], val_k=ev["k"])
        else:
            record.update(val_loss=None, val_top1=None, val_top5=None, val_k=None)
        history.append(record)
        log.info("epoch %d lr %.4g loss %.4f train@1 %.3f val@1 %s", epoch, lr, record["train_loss"],
                 record["train_top1"], record["val_top1"])
        if on_epoch is not None and on_epoch(record):
            break
    return history


@dataclass
class RunResult:
    net: STGCN
    history: list[dict]
    checkpoint: Checkpoint


def run_experiment(
    layout: JointLayout,
    strategy,
    train_seqs: list[SkeletonSequence],
    val_seqs: list[SkeletonSequence] | None,
    num_classes: int,
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    classes: list[str] | None = None,
) -> RunResult:
    """Build graph, partition and network from one seed, train, and package a checkpoint."""
    strategy = Strategy.parse(strategy)
    pa, stats = build_adjacency(layout, strategy, train_seqs)
    net = STGCN(num_classes, pa, model_config)
    init_parameters(net, train_config.seed)
    history = train(net, train_seqs, val_seqs, train_config)
    ckpt = Checkpoint(
        state={k: v.copy() for k, v in net.state_dict().items()},
        epoch=train_config.epochs,
        num_classes=num_classes,
        layout=layout.to_dict(),
        strategy=strategy.value,
        model_config=model_config.to_dict(),
        train_config=train_config.to_dict(),
        gravity=stats.to_list() if stats is not None else None,
        alpha=pa.alpha,
        classes=list(classes or []),
    )
    return RunResult(net, history, ckpt)
