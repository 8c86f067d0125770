"""Spatial-temporal graph convolutional networks for skeleton action recognition, on numpy."""
from __future__ import annotations

from .graph import JointLayout, SkeletonGraph, build_graph, builtin_layout, known_layouts, resolve_layout
from .model import STGCN, ModelConfig, init_parameters
from .partition import GravityStats, PartitionedAdjacency, Strategy, compute_gravity_stats, decompose_adjacency
from .training import TrainConfig, evaluate, lr_at, run_experiment, train

__version__ = "0.1.0"

__all__ = [
    "JointLayout", "SkeletonGraph", "build_graph", "builtin_layout", "known_layouts", "resolve_layout",
    "STGCN", "ModelConfig", "init_parameters",
    "GravityStats", "PartitionedAdjacency", "Strategy", "compute_gravity_stats", "decompose_adjacency",
    "TrainConfig", "evaluate", "lr_at", "run_experiment", "train",
]
