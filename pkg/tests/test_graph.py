from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stgcn.graph import (
    JointLayout, LayoutError, build_graph, builtin_layout, known_layouts, load_layout_file,
    random_connected_layout, register_layout, resolve_layout, validate_layout,
)

# degrees counted by hand from the canonical OpenPose edge list
OPENPOSE18_DEGREES = [3, 5, 2, 2, 1, 2, 2, 1, 2, 2, 1, 2, 2, 1, 2, 2, 1, 1]


def test_builtin_layouts_registered():
    assert set(known_layouts()) >= {"openpose18", "ntu25"}
    assert builtin_layout("openpose18").num_joints == 18
    assert builtin_layout("ntu25").num_joints == 25


def test_openpose18_adjacency_degrees():
    g = build_graph(builtin_layout("openpose18"))
    assert g.adjacency.sum(axis=1).tolist() == OPENPOSE18_DEGREES
    assert len(builtin_layout("openpose18").edges) == 17


def test_ntu25_is_a_tree():
    g = build_graph(builtin_layout("ntu25"))
    assert g.adjacency.sum() / 2 == 24
    assert np.array_equal(g.adjacency, g.adjacency.T)


def test_adjacency_is_read_only():
    g = build_graph(builtin_layout("openpose18"))
    with pytest.raises(ValueError):
        g.adjacency[0, 0] = 1.0


def test_unknown_layout_lists_known():
    with pytest.raises(LayoutError, match="openpose18"):
        builtin_layout("coco99")


@pytest.mark.parametrize("edges,invariant", [
    (((0, 5),), "index out of range"),
    (((0, 0), (0, 1)), "self loop"),
    (((0, 1), (1, 0)), "duplicate edge"),
])
def test_invalid_edges_rejected(edges, invariant):
    layout = JointLayout("bad", 3, edges + ((1, 2),))
    assert invariant in [v.invariant for v in validate_layout(layout)]
    with pytest.raises(LayoutError):
        build_graph(layout)


def test_disconnected_rejected():
    layout = JointLayout("split", 4, ((0, 1), (2, 3)))
    assert [v.invariant for v in validate_layout(layout)] == ["connected"]


def test_single_joint_graph():
    g = build_graph(JointLayout("dot", 1, ()))
    assert g.adjacency.tolist() == [[0.0]]
    assert g.neighbors(0) == [0]


def test_neighbors_root_first():
    g = build_graph(builtin_layout("openpose18"))
    assert g.neighbors(1) == [1, 0, 2, 5, 8, 11]


def test_layout_file_roundtrip(tmp_path):
    path = tmp_path / "hand.json"
    layout = JointLayout("hand3", 3, ((0, 1), (1, 2)), ("wrist", "knuckle", "tip"))
    path.write_text(json.dumps(layout.to_dict()))
    loaded = load_layout_file(path)
    assert loaded == layout
    assert resolve_layout(str(path)) == layout


def test_layout_file_violations_named(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"name": "bad", "num_joints": 2, "edges": [[0, 0]]}))
    with pytest.raises(LayoutError, match="self loop"):
        load_layout_file(path)


def test_register_layout():
    register_layout(JointLayout("pair-test", 2, ((0, 1),)))
    assert resolve_layout("pair-test").num_joints == 2
    with pytest.raises(LayoutError):
        register_layout(JointLayout("broken-test", 2, ()))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 5), st.integers(0, 2**31 - 1))
def test_random_layouts_are_valid(V, extra, seed):
    layout = random_connected_layout(np.random.default_rng(seed), V, extra)
    assert validate_layout(layout) == []
    g = build_graph(layout)
    assert np.array_equal(g.adjacency, g.adjacency.T)
    assert np.all(np.diag(g.adjacency) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31 - 1))
def test_permutation_relabels_adjacency(V, seed):
    rng = np.random.default_rng(seed)
    layout = random_connected_layout(rng, V, 2)
    perm = rng.permutation(V)
    A = build_graph(layout).adjacency
    B = build_graph(layout.permuted(perm)).adjacency
    P = np.eye(V)[perm]  # row i is e_{perm[i]}
    assert np.array_equal(B, P.T @ A @ P)
