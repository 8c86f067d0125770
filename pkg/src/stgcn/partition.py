"""Neighbor partitioning and the degree-normalized adjacency stacks fed to the model."""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .graph import JointLayout, SkeletonGraph

DEFAULT_ALPHA = 0.001
TIE_RTOL = 1e-6


class PartitionError(ValueError):
    pass


class Strategy(str, Enum):
    UNI = "uni_labeling"
    DISTANCE = "distance"
    SPATIAL = "spatial_configuration"

    @property
    def num_subsets(self) -> int:
        return {Strategy.UNI: 1, Strategy.DISTANCE: 2, Strategy.SPATIAL: 3}[self]

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        aliases = {"uni": cls.UNI, "spatial": cls.SPATIAL}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            names = [s.value for s in cls] + list(aliases)
            raise PartitionError(f"unknown strategy {value!r}; expected one of {names}") from None


@dataclass(frozen=True, eq=False)
class GravityStats:
    """Per-joint mean distance to the frame's gravity center over a training split."""

    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        if r.ndim != 1 or not np.all(np.isfinite(r)) or np.any(r < 0):
            raise PartitionError("gravity distances must be a finite, non-negative vector")
        object.__setattr__(self, "r", r)

    def to_list(self) -> list[float]:
        return [float(v) for v in self.r]


def compute_gravity_stats(sequences, layout: JointLayout) -> GravityStats:
    """Average joint-to-center distance over every (sequence, person, frame).

    Frames whose coordinates are all zero are padding for an absent person
    and are skipped. Confidence is ignored: the center is an unweighted mean.
    """
    sequences = list(sequences)
    if not sequences:
        raise PartitionError("cannot compute gravity stats from an empty training set")
    V = layout.num_joints
    total = np.zeros(V, dtype=np.float64)
    count = 0
    for seq in sequences:
        if seq.layout_name != layout.name or seq.values.shape[2] != V:
            raise PartitionError(
                f"sequence {seq.meta!r} uses layout {seq.layout_name!r} ({seq.values.shape[2]} joints), "
                f"expected {layout.name!r} ({V} joints)"
            )
        coords = np.asarray(seq.values[: seq.dims], dtype=np.float64)  # (D, T, V, M)
        coords = np.moveaxis(coords, 0, -1)  # (T, V, M, D)
        coords = np.moveaxis(coords, 2, 0).reshape(-1, V, coords.shape[-1])  # (M*T, V, D)
        present = np.any(coords != 0, axis=(1, 2))
        frames = coords[present]
        if len(frames) == 0:
            continue
        center = frames.mean(axis=1, keepdims=True)
        dist = np.linalg.norm(frames - center, axis=2)
        total += dist.sum(axis=0)
        count += len(frames)
    if count == 0:
        raise PartitionError("training set contains no non-empty frames")
    return GravityStats(total / count)


def label_map(strategy, graph: SkeletonGraph, stats: GravityStats | None, root: int, neighbor: int) -> int:
    strategy = Strategy.parse(strategy)
    V = graph.num_joints
    if not (0 <= root < V and 0 <= neighbor < V):
        raise PartitionError(f"joint index out of range: root={root}, neighbor={neighbor}, V={V}")
    if neighbor != root and graph.adjacency[root, neighbor] == 0:
        raise PartitionError(f"joint {neighbor} is not in the 1-neighborhood of joint {root}")
    if strategy is Strategy.UNI:
        return 0
    if strategy is Strategy.DISTANCE:
        return 0 if neighbor == root else 1
    if stats is None:
        raise PartitionError("spatial_configuration partitioning requires gravity stats from a training split")
    if len(stats.r) != V:
        raise PartitionError(f"gravity stats cover {len(stats.r)} joints, graph has {V}")
    r_root, r_nb = stats.r[root], stats.r[neighbor]
    if abs(r_nb - r_root) <= TIE_RTOL * max(1.0, r_root):
        return 0
    return 1 if r_nb < r_root else 2


def normalize_stack(subsets: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Symmetric degree normalization of each A_j, with alpha added to every degree."""
    deg = subsets.sum(axis=2) + alpha  # (K, V)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return subsets * inv_sqrt[:, :, None] * inv_sqrt[:, None, :]


@dataclass(frozen=True, eq=False)
class PartitionedAdjacency:
    strategy: Strategy
    subsets: np.ndarray  # (K, V, V), entries of A + I split by label
    normalized: np.ndarray  # (K, V, V)
    alpha: float = DEFAULT_ALPHA

    @property
    def num_subsets(self) -> int:
        return self.subsets.shape[0]

    @property
    def num_joints(self) -> int:
        return self.subsets.shape[1]

    def to_json_doc(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "alpha": float(self.alpha),
            "matrices": self.normalized.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json_doc())


def decompose_adjacency(
    strategy, graph: SkeletonGraph, stats: GravityStats | None = None, alpha: float = DEFAULT_ALPHA
) -> PartitionedAdjacency:
    strategy = Strategy.parse(strategy)
    V = graph.num_joints
    K = strategy.num_subsets
    subsets = np.zeros((K, V, V), dtype=np.float64)
    for i in range(V):
        for k in graph.neighbors(i):
            subsets[label_map(strategy, graph, stats, i, k), i, k] = 1.0
    normalized = normalize_stack(subsets, alpha)
    for arr in (subsets, normalized):
        arr.setflags(write=False)
    return PartitionedAdjacency(strategy, subsets, normalized, float(alpha))


def apply_edge_importance(pa: PartitionedAdjacency, masks) -> PartitionedAdjacency:
    """Multiply each already-normalized matrix by its mask, element-wise."""
    masks = np.asarray(masks, dtype=np.float64)
    if masks.shape != pa.normalized.shape:
        raise PartitionError(f"mask stack shape {masks.shape} does not match adjacency {pa.normalized.shape}")
    return PartitionedAdjacency(pa.strategy, pa.subsets, pa.normalized * masks, pa.alpha)


def degree_summary(pa: PartitionedAdjacency) -> list[dict]:
    out = []
    for j in range(pa.num_subsets):
        deg = pa.subsets[j].sum(axis=1)
        out.append({
            "subset": j,
            "edges": int(pa.subsets[j].sum()),
            "min_degree": int(deg.min()),
            "max_degree": int(deg.max()),
            "empty_rows": int((deg == 0).sum()),
        })
    return out
