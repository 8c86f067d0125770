"""Deliberately naive reference evaluations of the graph convolutions.

Nothing here is used on the production path. Each function is a literal
loop over nodes and neighbors so it can serve as ground truth in tests and
in ``stgcn selftest``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SkeletonGraph
from .partition import GravityStats, PartitionedAdjacency, Strategy, label_map


@dataclass(frozen=True)
class NeighborSet:
    root: tuple[int, int]
    members: tuple[tuple[int, int], ...]


def neighbor_set(graph: SkeletonGraph, t: int, i: int, kernel: int = 1, num_frames: int | None = None) -> NeighborSet:
    """All (frame, joint) pairs within spatial distance 1 and ``kernel // 2`` frames of (t, i).

    The spatial bound is the distance D = 1; ``kernel`` is the temporal kernel size.
    """
    half = kernel // 2
    members = []
    for q in range(t - half, t + half + 1):
        if num_frames is not None and not 0 <= q < num_frames:
            continue
        for j in range(graph.num_joints):
            if j == i or graph.adjacency[i, j]:
                members.append((q, j))
    return NeighborSet((t, i), tuple(members))


def _as_weight_stack(weights, num_labels: int, c_in: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 2:  # one c-vector per label -> single output channel
        w = w[:, :, None]
    if w.shape[:2] != (num_labels, c_in):
        raise ValueError(f"weights {w.shape} do not match {num_labels} labels x {c_in} input channels")
    return w


def spatial_conv_reference(f_in, graph: SkeletonGraph, strategy, stats: GravityStats | None, weights) -> np.ndarray:
    """Single-frame graph convolution with per-subset cardinality normalization.

    ``f_in`` is (V, c); ``weights`` is (K, c) or (K, c, c'). Each neighbor j of
    root i contributes f_in[j] @ w[label] / Z, where Z is the size of the
    label's subset within i's neighborhood.
    """
    strategy = Strategy.parse(strategy)
    f_in = np.asarray(f_in, dtype=np.float64)
    V, c = f_in.shape
    if V != graph.num_joints:
        raise ValueError(f"features cover {V} joints, graph has {graph.num_joints}")
    w = _as_weight_stack(weights, strategy.num_subsets, c)
    out = np.zeros((V, w.shape[2]))
    for i in range(V):
        nbrs = graph.neighbors(i)
        labels = {j: label_map(strategy, graph, stats, i, j) for j in nbrs}
        for j in nbrs:
            Z = sum(1 for k in nbrs if labels[k] == labels[j])
            out[i] += f_in[j] @ w[labels[j]] / Z
    return out


def st_labels(strategy, graph: SkeletonGraph, stats, t: int, i: int, kernel: int, num_frames: int) -> dict:
    """Spatiotemporal label of every member of the neighborhood of (t, i)."""
    strategy = Strategy.parse(strategy)
    K = strategy.num_subsets
    half = kernel // 2
    return {
        (q, j): label_map(strategy, graph, stats, i, j) + (q - t + half) * K
        for q, j in neighbor_set(graph, t, i, kernel, num_frames).members
    }


def st_conv_reference(f_in, graph: SkeletonGraph, strategy, stats: GravityStats | None, kernel: int, weights) -> np.ndarray:
    """Spatiotemporal graph convolution over labels ``l + (q - t + Γ//2) * K``.

    ``f_in`` is (T, V, c); ``weights`` is (Γ*K, c) or (Γ*K, c, c'). Z is the
    cardinality of each spatiotemporal subset; frames outside [0, T) contribute
    nothing.
    """
    if kernel % 2 == 0:
        raise ValueError(f"temporal kernel must be odd, got {kernel}")
    strategy = Strategy.parse(strategy)
    f_in = np.asarray(f_in, dtype=np.float64)
    T, V, c = f_in.shape
    w = _as_weight_stack(weights, kernel * strategy.num_subsets, c)
    out = np.zeros((T, V, w.shape[2]))
    for t in range(T):
        for i in range(V):
            labels = st_labels(strategy, graph, stats, t, i, kernel, T)
            sizes: dict[int, int] = {}
            for lab in labels.values():
                sizes[lab] = sizes.get(lab, 0) + 1
            for (q, j), lab in labels.items():
                out[t, i] += f_in[q, j] @ w[lab] / sizes[lab]
    return out


def matrix_form_reference(f_in, normalized, weights) -> np.ndarray:
    """out[i] = sum_j sum_k normalized[j][i][k] * (f_in[k] @ W_j), by explicit loops.

    ``f_in`` is (V, c), ``normalized`` is (K, V, V) and ``weights`` is (K, c, c').
    """
    f_in = np.asarray(f_in, dtype=np.float64)
    A = np.asarray(normalized.normalized if isinstance(normalized, PartitionedAdjacency) else normalized,
                   dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    K, V, V2 = A.shape
    if V != V2 or f_in.shape[0] != V or W.shape[0] != K or W.shape[1] != f_in.shape[1]:
        raise ValueError(f"shape mismatch: f_in {f_in.shape}, adjacency {A.shape}, weights {W.shape}")
    c_in, c_out = W.shape[1], W.shape[2]
    out = np.zeros((V, c_out))
    for j in range(K):
        for i in range(V):
            for k in range(V):
                a = A[j, i, k]
                if a == 0.0:
                    continue
                for o in range(c_out):
                    acc = 0.0
                    for ch in range(c_in):
                        acc += f_in[k, ch] * W[j, ch, o]
                    out[i, o] += a * acc
    return out


def cardinality_normalized(pa: PartitionedAdjacency) -> np.ndarray:
    """Row-normalized subsets, A_j[i][k] / |subset j of i|; empty rows stay zero."""
    deg = pa.subsets.sum(axis=2, keepdims=True)
    return np.divide(pa.subsets, deg, out=np.zeros_like(pa.subsets), where=deg > 0)


def normalization_discrepancy(graph: SkeletonGraph, pa: PartitionedAdjacency, stats, f_in, weights) -> float:
    """Max |cardinality-normalized output - symmetric-normalized output| on one frame."""
    a = spatial_conv_reference(f_in, graph, pa.strategy, stats, weights)
    b = matrix_form_reference(f_in, pa.normalized, _as_weight_stack(weights, pa.num_subsets, np.shape(f_in)[1]))
    return float(np.max(np.abs(a - b)))
