"""Skeleton joint layouts and the intra-body adjacency built from them."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class LayoutError(ValueError):
    """Raised for unknown or invalid joint layouts."""


class Violation(NamedTuple):
    invariant: str
    detail: str


@dataclass(frozen=True)
class JointLayout:
    name: str
    num_joints: int
    edges: tuple[tuple[int, int], ...]
    joint_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(tuple(int(v) for v in e) for e in self.edges))
        names = tuple(self.joint_names) or tuple(f"joint{i}" for i in range(self.num_joints))
        object.__setattr__(self, "joint_names", names)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_joints": self.num_joints,
            "edges": [list(e) for e in self.edges],
            "joint_names": list(self.joint_names),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "JointLayout":
        try:
            return cls(
                name=str(doc["name"]),
                num_joints=int(doc["num_joints"]),
                edges=tuple(tuple(e) for e in doc["edges"]),
                joint_names=tuple(doc.get("joint_names", ())),
            )
        except (KeyError, TypeError) as exc:
            raise LayoutError(f"malformed layout document: {exc}") from exc

    def permuted(self, perm) -> "JointLayout":
        """Relabel joints so that old joint ``i`` becomes ``perm[i]``."""
        perm = [int(p) for p in perm]
        names = [""] * self.num_joints
        for old, new in enumerate(perm):
            names[new] = self.joint_names[old]
        return JointLayout(
            name=f"{self.name}-permuted",
            num_joints=self.num_joints,
            edges=tuple((perm[i], perm[j]) for i, j in self.edges),
            joint_names=tuple(names),
        )


@dataclass(frozen=True, eq=False)
class SkeletonGraph:
    layout: JointLayout
    adjacency: np.ndarray
    identity: np.ndarray

    @property
    def num_joints(self) -> int:
        return self.layout.num_joints

    def neighbors(self, i: int) -> list[int]:
        """The 1-neighborhood of joint ``i``, root included."""
        return [i] + [int(k) for k in np.flatnonzero(self.adjacency[i])]


# OpenPose 18-keypoint (COCO) skeleton.
OPENPOSE18_NAMES = (
    "nose", "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "right_eye", "left_eye", "right_ear", "left_ear",
)
OPENPOSE18_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7), (1, 8), (8, 9),
    (9, 10), (1, 11), (11, 12), (12, 13), (0, 14), (14, 16), (0, 15), (15, 17),
)

# Kinect v2, 0-based. Each edge links a joint to its parent in the kinematic tree:
#   0 spine_base   1 spine_mid   20 spine_shoulder   2 neck   3 head
#   4/8 shoulders -> 5/9 elbows -> 6/10 wrists -> 7/11 hands -> 21/23 tips, 22/24 thumbs
#   12/16 hips -> 13/17 knees -> 14/18 ankles -> 15/19 feet
NTU25_NAMES = (
    "spine_base", "spine_mid", "neck", "head",
    "left_shoulder", "left_elbow", "left_wrist", "left_hand",
    "right_shoulder", "right_elbow", "right_wrist", "right_hand",
    "left_hip", "left_knee", "left_ankle", "left_foot",
    "right_hip", "right_knee", "right_ankle", "right_foot",
    "spine_shoulder",
    "left_hand_tip", "left_thumb", "right_hand_tip", "right_thumb",
)
NTU25_EDGES = (
    (0, 1), (1, 20), (20, 2), (2, 3),
    (20, 4), (4, 5), (5, 6), (6, 7), (7, 21), (7, 22),
    (20, 8), (8, 9), (9, 10), (10, 11), (11, 23), (11, 24),
    (0, 12), (12, 13), (13, 14), (14, 15),
    (0, 16), (16, 17), (17, 18), (18, 19),
)

_REGISTRY: dict[str, JointLayout] = {
    "openpose18": JointLayout("openpose18", 18, OPENPOSE18_EDGES, OPENPOSE18_NAMES),
    "ntu25": JointLayout("ntu25", 25, NTU25_EDGES, NTU25_NAMES),
}


def known_layouts() -> list[str]:
    return sorted(_REGISTRY)


def register_layout(layout: JointLayout) -> None:
    problems = validate_layout(layout)
    if problems:
        raise LayoutError(f"cannot register {layout.name!r}: {problems}")
    _REGISTRY[layout.name] = layout


def builtin_layout(name: str) -> JointLayout:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise LayoutError(f"unknown layout {name!r}; known layouts: {', '.join(known_layouts())}") from None


def load_layout_file(path) -> JointLayout:
    with open(path) as fh:
        layout = JointLayout.from_dict(json.load(fh))
    problems = validate_layout(layout)
    if problems:
        raise LayoutError(f"{path}: " + "; ".join(f"{v.invariant}: {v.detail}" for v in problems))
    return layout


def resolve_layout(spec: str) -> JointLayout:
    """Accept either a registered layout name or a path to a layout JSON file."""
    if spec in _REGISTRY:
        return _REGISTRY[spec]
    if Path(spec).is_file():
        return load_layout_file(spec)
    return builtin_layout(spec)


def _is_connected(num_joints: int, edges) -> bool:
    if num_joints == 0:
        return False
    adj: dict[int, list[int]] = {i: [] for i in range(num_joints)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for k in adj[stack.pop()]:
            if k not in seen:
                seen.add(k)
                stack.append(k)
    return len(seen) == num_joints


def validate_layout(layout: JointLayout) -> list[Violation]:
    out: list[Violation] = []
    V = layout.num_joints
    if V < 1:
        out.append(Violation("num_joints", f"must be >= 1, got {V}"))
    if len(layout.joint_names) != V:
        out.append(Violation("joint_names", f"expected {V} names, got {len(layout.joint_names)}"))
    seen = set()
    in_range = []
    for i, j in layout.edges:
        if not (0 <= i < V and 0 <= j < V):
            out.append(Violation("index out of range", f"edge ({i}, {j}) with {V} joints"))
            continue
        if i == j:
            out.append(Violation("self loop", f"edge ({i}, {j})"))
            continue
        key = (min(i, j), max(i, j))
        if key in seen:
            out.append(Violation("duplicate edge", f"edge ({i}, {j})"))
            continue
        seen.add(key)
        in_range.append(key)
    if V >= 1 and not _is_connected(V, in_range):
        out.append(Violation("connected", f"layout {layout.name!r} is not connected"))
    return out


def build_graph(layout: JointLayout) -> SkeletonGraph:
    problems = validate_layout(layout)
    if problems:
        raise LayoutError("; ".join(f"{v.invariant}: {v.detail}" for v in problems))
    V = layout.num_joints
    A = np.zeros((V, V), dtype=np.float64)
    for i, j in layout.edges:
        A[i, j] = 1.0
        A[j, i] = 1.0
    A.setflags(write=False)
    identity = np.eye(V)
    identity.setflags(write=False)
    return SkeletonGraph(layout=layout, adjacency=A, identity=identity)


def random_connected_layout(rng: np.random.Generator, num_joints: int, extra_edges: int = 0) -> JointLayout:
    """A random spanning tree plus up to ``extra_edges`` additional distinct edges."""
    order = rng.permutation(num_joints)
    edges = set()
    for pos in range(1, num_joints):
        parent = order[rng.integers(pos)]
        a, b = int(order[pos]), int(parent)
        edges.add((min(a, b), max(a, b)))
    for _ in range(extra_edges):
        a, b = (int(v) for v in rng.integers(num_joints, size=2))
        if a != b:
            edges.add((min(a, b), max(a, b)))
    return JointLayout(f"random{num_joints}", num_joints, tuple(sorted(edges)))
