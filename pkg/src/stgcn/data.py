"""Skeleton sequence I/O, preprocessing, augmentation and synthetic datasets."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .graph import JointLayout, builtin_layout

MAX_PERSONS = 2
DEFAULT_ANGLES = (-10.0, -5.0, 0.0, 5.0, 10.0)
DEFAULT_SCALES = (0.9, 1.0, 1.1)
DEFAULT_TRANSLATIONS = (-0.1, 0.0, 0.1)


class DataError(ValueError):
    pass


@dataclass(eq=False)
class SkeletonSequence:
    """``values`` is (3, T, V, M): (x, y, confidence) for 2-D data or (x, y, z) for 3-D."""

    values: np.ndarray
    label: int
    layout_name: str
    meta: str = ""
    dims: int = 2

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]

    @property
    def num_joints(self) -> int:
        return self.values.shape[2]

    def frame(self, t: int) -> np.ndarray:
        return self.values[:, t]


@dataclass
class DatasetManifest:
    classes: list[str]
    layout: str
    items: list[dict] = field(default_factory=list)
    split: str = "train"
    base_dir: str | None = field(default=None, compare=False)

    def __post_init__(self):
        for item in self.items:
            if not 0 <= int(item["label"]) < len(self.classes):
                raise DataError(f"label {item['label']} of {item['path']} outside class table of {len(self.classes)}")

    def to_dict(self) -> dict:
        return {"classes": self.classes, "layout": self.layout, "split": self.split, "items": self.items}

    def save(self, path):
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"manifest not found: {path}")
        try:
            doc = json.loads(path.read_text())
            items = [{"path": str(it["path"]), "label": int(it["label"])} for it in doc["items"]]
            return cls(list(doc["classes"]), str(doc["layout"]), items, doc.get("split", "train"), str(path.parent))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from exc

    def load_sequences(self, root=None) -> list[SkeletonSequence]:
        root = root if root is not None else self.base_dir
        base = Path(root) if root is not None else None
        out = []
        for item in self.items:
            p = Path(item["path"])
            if base is not None and not p.is_absolute():
                p = base / p
            seq = load_sequence(p)
            if seq.label != item["label"]:
                seq.label = item["label"]
            out.append(seq)
        return out


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


# ------------------------------------------------------------------ persons

def select_persons(persons: np.ndarray, keep: int = MAX_PERSONS) -> tuple[np.ndarray, list[int]]:
    """Keep the ``keep`` persons with the highest mean joint confidence.

    ``persons`` is (P, T, V, 3) with confidence in the last channel. Returns the
    selected (keep, T, V, 3) array, zero-filled for missing slots, and the
    original indices in ranked order. Ties keep the original order.
    """
    persons = np.asarray(persons, dtype=np.float64)
    P, T, V = persons.shape[:3]
    if P == 0:
        return np.zeros((keep, T, V, 3)), []
    means = persons[..., 2].mean(axis=(1, 2))
    order = sorted(range(P), key=lambda i: (-means[i], i))[:keep]
    out = np.zeros((keep, T, V, persons.shape[3]))
    out[: len(order)] = persons[order]
    return out, order


# ------------------------------------------------------------------ file format

def save_sequence(seq: SkeletonSequence, path) -> None:
    M = seq.values.shape[3]
    present = [m for m in range(M) if np.any(seq.values[..., m] != 0)]
    lines = [json.dumps({
        "layout": seq.layout_name, "label": int(seq.label), "num_frames": seq.num_frames,
        "num_persons": len(present), "dims": seq.dims, "meta": seq.meta,
    })]
    for t in range(seq.num_frames):
        persons = [seq.values[:, t, :, m].T.tolist() for m in present]
        lines.append(json.dumps({"persons": persons}))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_sequence(path, resolution: tuple[float, float] | None = None) -> SkeletonSequence:
    """Parse a JSON-lines skeleton file into a (3, T, V, 2) sequence.

    2-D coordinates are mapped to [-0.5, 0.5] when the header (or the caller)
    gives a frame ``resolution``; otherwise they are taken as already normalized.
    """
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read sequence {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}:1: empty sequence file")
    try:
        header = json.loads(lines[0])
        layout_name = header["layout"]
        label = int(header["label"])
        num_frames = int(header["num_frames"])
        dims = int(header.get("dims", 2))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}:1: malformed header ({exc})") from exc
    if dims not in (2, 3):
        raise DataError(f"{path}:1: dims must be 2 or 3, got {dims}")
    try:
        V = builtin_layout(layout_name).num_joints
    except ValueError:
        V = header.get("num_joints")
        if V is None:
            raise DataError(f"{path}:1: unknown layout {layout_name!r} and no num_joints in header") from None
    if len(lines) - 1 != num_frames:
        raise DataError(f"{path}: header declares {num_frames} frames, file has {len(lines) - 1}")
    resolution = resolution or header.get("resolution")

    frames: list[list] = []
    max_p = 0
    for lineno, raw in enumerate(lines[1:], start=2):
        try:
            persons = json.loads(raw)["persons"]
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: malformed frame ({exc})") from exc
        for p in persons:
            if len(p) != V:
                raise DataError(f"{path}:{lineno}: expected {V} joints for {layout_name}, got {len(p)}")
            for joint in p:
                if len(joint) != 3:
                    raise DataError(f"{path}:{lineno}: each joint needs 3 values, got {len(joint)}")
                if dims == 2 and not 0.0 <= joint[2] <= 1.0:
                    raise DataError(f"{path}:{lineno}: confidence {joint[2]} outside [0, 1]")
        frames.append(persons)
        max_p = max(max_p, len(persons))

    T = num_frames
    cand = np.zeros((max_p, T, V, 3))
    for t, persons in enumerate(frames):
        for m, p in enumerate(persons):
            cand[m, t] = p
    if dims == 2 and resolution is not None:
        w, h = resolution
        present = np.any(cand != 0, axis=3, keepdims=True)
        cand[..., 0] = cand[..., 0] / w - 0.5
        cand[..., 1] = cand[..., 1] / h - 0.5
        cand *= present
    if dims == 2:
        chosen, _ = select_persons(cand)
    else:
        if max_p > MAX_PERSONS:
            raise DataError(f"{path}: {max_p} persons in a 3-D sequence, at most {MAX_PERSONS} allowed")
        chosen = np.zeros((MAX_PERSONS, T, V, 3))
        chosen[:max_p] = cand
    values = np.ascontiguousarray(chosen.transpose(3, 1, 2, 0)).astype(np.float32)
    return SkeletonSequence(values, label, layout_name, str(header.get("meta", path.name)), dims)


# ------------------------------------------------------------------ temporal

def replay_pad(seq: SkeletonSequence, target_T: int) -> SkeletonSequence:
    T = seq.num_frames
    if T < 1:
        raise DataError("cannot pad an empty sequence")
    if target_T < T:
        raise DataError(f"replay_pad target {target_T} is shorter than the sequence ({T} frames)")
    if target_T == T:
        return seq
    idx = np.arange(target_T) % T
    return replace(seq, values=np.ascontiguousarray(seq.values[:, idx]))


def random_fragment(seq: SkeletonSequence, rng: np.random.Generator, window_T: int) -> SkeletonSequence:
    if window_T < 1:
        raise DataError(f"fragment window must be >= 1, got {window_T}")
    T = seq.num_frames
    if T <= window_T:
        return replay_pad(seq, window_T)
    start = int(rng.integers(0, T - window_T + 1))
    return replace(seq, values=np.ascontiguousarray(seq.values[:, start:start + window_T]))


# ------------------------------------------------------------------ spatial

@dataclass(frozen=True)
class MovingParams:
    angles: tuple[float, ...] = DEFAULT_ANGLES  # degrees
    scales: tuple[float, ...] = DEFAULT_SCALES
    translations: tuple[float, ...] = DEFAULT_TRANSLATIONS


def _affine_params(rng: np.random.Generator, params: MovingParams):
    angle = params.angles[rng.integers(len(params.angles))]
    scale = params.scales[rng.integers(len(params.scales))]
    tx = params.translations[rng.integers(len(params.translations))]
    ty = params.translations[rng.integers(len(params.translations))]
    return np.array([angle, scale, tx, ty], dtype=np.float64)


def apply_moving(seq: SkeletonSequence, start, end) -> SkeletonSequence:
    """Apply rotation/scale/translation interpolated linearly from ``start`` to ``end``.

    ``start`` and ``end`` are (angle_degrees, scale, tx, ty). Coordinates are
    rotated and scaled about the origin, then translated. Absent persons stay zero.
    """
    T = seq.num_frames
    w = np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)
    p = (1 - w)[:, None] * np.asarray(start, float) + w[:, None] * np.asarray(end, float)
    theta = np.deg2rad(p[:, 0])
    x = seq.values[0].astype(np.float64)
    y = seq.values[1].astype(np.float64)
    present = np.any(seq.values[: seq.dims] != 0, axis=(0, 2))[:, None, :]  # (T, 1, M)
    c = (np.cos(theta) * p[:, 1])[:, None, None]
    sn = (np.sin(theta) * p[:, 1])[:, None, None]
    nx = (c * x - sn * y + p[:, 2, None, None]) * present
    ny = (sn * x + c * y + p[:, 3, None, None]) * present
    values = seq.values.copy()
    values[0] = nx
    values[1] = ny
    return replace(seq, values=values)


def random_moving(seq: SkeletonSequence, rng: np.random.Generator, params: MovingParams = MovingParams()) -> SkeletonSequence:
    if seq.dims != 2:
        raise DataError("random moving is defined for 2-D coordinate channels")
    start = _affine_params(rng, params)
    end = _affine_params(rng, params)
    return apply_moving(seq, start, end)


# ------------------------------------------------------------------ synthetic

# A neutral standing pose for openpose18 in normalized image coordinates (y down).
_OPENPOSE18_POSE = np.array([
    [0.00, -0.30], [0.00, -0.20],
    [-0.08, -0.20], [-0.12, -0.08], [-0.14, 0.04],
    [0.08, -0.20], [0.12, -0.08], [0.14, 0.04],
    [-0.05, 0.02], [-0.06, 0.16], [-0.06, 0.30],
    [0.05, 0.02], [0.06, 0.16], [0.06, 0.30],
    [-0.02, -0.32], [0.02, -0.32], [-0.04, -0.31], [0.04, -0.31],
])

SYNTH_CLASSES = ("vertical_oscillation", "horizontal_oscillation", "rotation")


def _base_pose(layout: JointLayout) -> np.ndarray:
    if layout.num_joints == 18:
        return _OPENPOSE18_POSE.copy()
    angles = np.linspace(0, 2 * math.pi, layout.num_joints, endpoint=False)
    return 0.2 * np.stack([np.cos(angles), np.sin(angles)], axis=1)


@dataclass(frozen=True)
class SynthParams:
    num_classes: int = 3
    samples_per_class: int = 32
    num_frames: int = 64
    layout: str = "openpose18"
    noise: float = 0.01
    amplitude: tuple[float, float] = (0.03, 0.08)
    period: tuple[float, float] = (12.0, 32.0)
    pose_jitter: float = 0.02


def synth_sequence(cls: int, rng: np.random.Generator, p: SynthParams, layout: JointLayout) -> np.ndarray:
    """One (3, T, V, 2) sample; the second person slot is empty."""
    T, V = p.num_frames, layout.num_joints
    pose = _base_pose(layout) + rng.normal(0, p.pose_jitter, size=(V, 2))
    offset = rng.uniform(-0.1, 0.1, size=2)
    amp = rng.uniform(*p.amplitude)
    period = rng.uniform(*p.period) / (1 + cls // 3)  # extra classes repeat a motion at a faster tempo
    phase = rng.uniform(0, 2 * math.pi)
    wave = np.sin(2 * math.pi * np.arange(T) / period + phase)  # (T,)
    xy = np.broadcast_to(pose, (T, V, 2)).copy()
    kind = cls % 3
    if kind == 0:
        xy[..., 1] += amp * wave[:, None]
    elif kind == 1:
        xy[..., 0] += amp * wave[:, None]
    else:
        theta = (amp * 4.0) * wave  # radians
        center = pose.mean(axis=0)
        rel = pose - center
        c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
        xy[..., 0] = center[0] + c * rel[None, :, 0] - s * rel[None, :, 1]
        xy[..., 1] = center[1] + s * rel[None, :, 0] + c * rel[None, :, 1]
    xy = xy + offset + rng.normal(0, p.noise, size=xy.shape) if p.noise > 0 else xy + offset
    conf = np.clip(rng.uniform(0.7, 1.0, size=(T, V)), 0, 1)
    values = np.zeros((3, T, V, MAX_PERSONS), dtype=np.float32)
    values[0, :, :, 0] = xy[..., 0]
    values[1, :, :, 0] = xy[..., 1]
    values[2, :, :, 0] = conf
    return values


def synth_dataset(params: SynthParams, seed: int, split: str = "train") -> tuple[DatasetManifest, list[SkeletonSequence]]:
    """Class-balanced synthetic motions, deterministic in ``seed``."""
    if params.num_classes < 2:
        raise DataError("synthetic datasets need at least 2 classes")
    layout = builtin_layout(params.layout)
    rng = np.random.default_rng(seed)
    seqs, items = [], []
    for i in range(params.samples_per_class):
        for c in range(params.num_classes):
            name = f"{split}_{c}_{i:04d}.jsonl"
            seqs.append(SkeletonSequence(synth_sequence(c, rng, params, layout), c, layout.name, name, 2))
            items.append({"path": name, "label": c})
    classes = [SYNTH_CLASSES[c % 3] + ("" if c < 3 else f"_x{1 + c // 3}") for c in range(params.num_classes)]
    return DatasetManifest(classes, layout.name, items, split), seqs


def write_dataset(manifest: DatasetManifest, sequences, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for item, seq in zip(manifest.items, sequences):
        save_sequence(seq, out_dir / item["path"])
    path = out_dir / f"{manifest.split}.json"
    manifest.save(path)
    return path
