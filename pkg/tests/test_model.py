from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stgcn import engine as E
from stgcn.graph import JointLayout, build_graph, builtin_layout, random_connected_layout
from stgcn.model import (
    FULL_CHANNELS, FULL_STRIDES, STGCN, ModelConfig, STGCNUnit, STGCNUnitConfig, init_parameters,
)
from stgcn.partition import GravityStats, decompose_adjacency

SMALL = ModelConfig(channels=(4, 4, 8), strides=(1, 2, 1), temporal_kernel=3, dropout=0.0)


def openpose_adjacency(strategy="distance"):
    g = build_graph(builtin_layout("openpose18"))
    stats = GravityStats(np.linspace(0.1, 0.9, 18)) if strategy == "spatial" else None
    return decompose_adjacency(strategy, g, stats)


def small_net(strategy="distance", config=SMALL, classes=3, seed=0):
    net = STGCN(classes, openpose_adjacency(strategy), config)
    init_parameters(net, seed)
    return net


def test_full_channel_plan():
    assert FULL_CHANNELS == (64, 64, 64, 128, 128, 128, 256, 256, 256)
    assert FULL_STRIDES == (1, 1, 1, 2, 1, 1, 2, 1, 1)
    cfg = ModelConfig()
    assert cfg.temporal_kernel == 9 and cfg.dropout == 0.5


def test_small_trace():
    net = small_net()
    trace = []
    with E.no_grad():
        logits = net(np.zeros((2, 3, 12, 18, 2)), trace=trace)
    assert logits.shape == (2, 3)
    assert dict(trace) == {
        "input": (4, 3, 12, 18), "unit1": (4, 4, 12, 18), "unit2": (4, 4, 6, 18),
        "unit3": (4, 8, 6, 18), "pool": (4, 8), "logits": (2, 3),
    }


def test_residual_modes():
    net = small_net()
    assert [u.res_mode for u in net.units] == ["none", "project", "project"]
    unit = STGCNUnit(STGCNUnitConfig(4, 4, 3, 1), 2, 5)
    assert unit.res_mode == "identity"


def test_unit_config_validation():
    with pytest.raises(ValueError):
        STGCNUnitConfig(3, 4, temporal_kernel=4)
    with pytest.raises(ValueError):
        STGCNUnitConfig(3, 4, temporal_stride=3)


def test_wrong_joint_count_rejected():
    with pytest.raises(E.ShapeError, match="joints"):
        small_net()(np.zeros((1, 3, 4, 25, 2)))


def test_masks_follow_edge_importance_flag():
    on = small_net()
    off = small_net(config=replace(SMALL, edge_importance=False))
    assert sum("mask" in n for n, _ in on.trainable()) == 3
    assert sum("mask" in n for n, _ in off.trainable()) == 0
    assert all(np.array_equal(m, np.ones((2, 18, 18))) for m in on.masks())


def test_mask_scales_normalized_adjacency():
    rng = np.random.default_rng(0)
    unit = STGCNUnit(STGCNUnitConfig(2, 3, 3, 1, 0.0), 2, 18)
    adj = E.Tensor(openpose_adjacency().normalized)
    unit.mask.data[...] = rng.uniform(0.5, 1.5, unit.mask.shape)
    assert np.allclose(unit.effective_adjacency(adj).data, adj.data * unit.mask.data)


def test_state_dict_roundtrip():
    a, b = small_net(seed=1), small_net(seed=2)
    x = np.random.default_rng(0).normal(size=(2, 3, 8, 18, 2))
    with E.no_grad():
        a(x, training=True, rng=np.random.default_rng(0))  # moves running stats
    b.load_state_dict(a.state_dict())
    with E.no_grad():
        assert np.array_equal(a(x).data, b(x).data)
    with pytest.raises(ValueError):
        b.load_state_dict({**a.state_dict(), "fc.weight": np.zeros((1, 1))})


def test_init_is_seeded():
    sa, sb = small_net(seed=5).state_dict(), small_net(seed=5).state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    sc = small_net(seed=6).state_dict()
    assert not np.array_equal(sa["fc.weight"], sc["fc.weight"])


def test_dropout_only_in_training():
    net = small_net(config=replace(SMALL, dropout=0.5))
    x = np.random.default_rng(1).normal(size=(2, 3, 8, 18, 2))
    with E.no_grad():
        e1, e2 = net(x).data, net(x).data
        t1 = net(x, training=True, rng=np.random.default_rng(0)).data
        t2 = net(x, training=True, rng=np.random.default_rng(1)).data
    assert np.array_equal(e1, e2)
    assert not np.array_equal(t1, t2)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["uni", "distance", "spatial"]))
def test_person_order_does_not_matter(seed, strategy):
    net = small_net(strategy, seed=seed % 1000)
    x = np.random.default_rng(seed).normal(size=(2, 3, 6, 18, 2))
    with E.no_grad():
        a = net(x).data
        b = net(x[..., ::-1]).data
    assert np.allclose(a, b, atol=1e-5)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_joint_relabelling_equivariance(V, seed):
    """Relabelling joints consistently in graph and input leaves eval-mode logits unchanged."""
    rng = np.random.default_rng(seed)
    layout = random_connected_layout(rng, V, 1)
    perm = rng.permutation(V)
    cfg = ModelConfig(channels=(4, 4), strides=(1, 1), temporal_kernel=3, dropout=0.0, edge_importance=False)
    a = STGCN(2, decompose_adjacency("distance", build_graph(layout)), cfg)
    b = STGCN(2, decompose_adjacency("distance", build_graph(layout.permuted(perm))), cfg)
    init_parameters(a, 0)
    init_parameters(b, 0)
    x = rng.normal(size=(1, 3, 5, V, 1))
    xp = np.empty_like(x)
    xp[:, :, :, perm] = x
    # data_bn runs over C*V channels; in eval mode with unit stats it is a per-channel identity map
    with E.precision(np.float64), E.no_grad():
        la, lb = a(x).data, b(xp).data
    assert np.allclose(la, lb, atol=1e-5)


def test_one_joint_layout_runs():
    pa = decompose_adjacency("uni", build_graph(JointLayout("dot", 1, ())))
    net = STGCN(2, pa, ModelConfig(channels=(2,), strides=(1,), temporal_kernel=3, dropout=0.0))
    init_parameters(net, 0)
    with E.no_grad():
        assert net(np.ones((1, 3, 4, 1, 1))).shape == (1, 2)
