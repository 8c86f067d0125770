"""Reduced-size invariant checks shared by ``stgcn selftest`` and the test suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from . import oracle
from .gradcheck import check_gradients
from .graph import build_graph, builtin_layout, random_connected_layout
from .model import STGCNUnit, STGCNUnitConfig, init_parameters
from .partition import GravityStats, PartitionedAdjacency, Strategy, decompose_adjacency


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    value: float | None = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail,
                "value": self.value, "seconds": round(self.seconds, 3)}


def random_stats(rng: np.random.Generator, V: int) -> GravityStats:
    return GravityStats(rng.uniform(0.0, 1.0, size=V))


def random_instances(rng: np.random.Generator, count: int, max_joints: int = 8):
    """(graph, strategy, stats) triples over random connected graphs and all strategies."""
    strategies = list(Strategy)
    for n in range(count):
        V = int(rng.integers(1, max_joints + 1))
        graph = build_graph(random_connected_layout(rng, V, extra_edges=int(rng.integers(0, 3))))
        strategy = strategies[n % len(strategies)]
        stats = random_stats(rng, V) if strategy is Strategy.SPATIAL else None
        yield graph, strategy, stats


# ------------------------------------------------------------------ partition

def partition_violations(pa: PartitionedAdjacency, graph) -> list[str]:
    problems = []
    A_I = graph.adjacency + graph.identity
    if not np.array_equal(pa.subsets.sum(axis=0), A_I):
        problems.append("partition-of-unity: sum_j A_j != A + I")
    if np.any(pa.subsets < 0):
        problems.append("non-negative: some A_j has a negative entry")
    if np.any((pa.subsets != 0) & (A_I == 0)[None]):
        problems.append("support: A_j has an entry outside A + I")
    if pa.strategy is Strategy.DISTANCE:
        if not (np.array_equal(pa.subsets[0], graph.identity) and np.array_equal(pa.subsets[1], graph.adjacency)):
            problems.append("distance: A_0 != I or A_1 != A")
    return problems


def check_partition(num_random: int = 100, seed: int = 0, inject_fault: bool = False) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    cases = []
    for name in ("openpose18", "ntu25"):
        graph = build_graph(builtin_layout(name))
        for strategy in Strategy:
            stats = random_stats(rng, graph.num_joints) if strategy is Strategy.SPATIAL else None
            cases.append((graph, strategy, stats))
    for _ in range(num_random):
        V = int(rng.integers(1, 11))
        graph = build_graph(random_connected_layout(rng, V, extra_edges=int(rng.integers(0, 4))))
        for strategy in Strategy:
            stats = random_stats(rng, V) if strategy is Strategy.SPATIAL else None
            cases.append((graph, strategy, stats))
    failures = []
    for graph, strategy, stats in cases:
        pa = decompose_adjacency(strategy, graph, stats)
        if inject_fault:
            bad = pa.subsets.copy()
            bad[0, 0, 0] += 1.0
            pa = PartitionedAdjacency(pa.strategy, bad, pa.normalized, pa.alpha)
        for problem in partition_violations(pa, graph):
            failures.append(f"{graph.layout.name}/{strategy.value}: {problem}")
    detail = f"{len(cases)} graph/strategy cases"
    if failures:
        detail = f"{len(failures)} violations, first: {failures[0]}"
    return CheckResult("partition-of-unity", not failures, detail, float(len(failures)), time.perf_counter() - t0)


# ------------------------------------------------------------------ oracle equivalence

def production_spatial_step(f_in: np.ndarray, normalized: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Run the model's spatial step on one frame: f_in (V, c), weights (K, c, c') -> (V, c')."""
    K, c_in, c_out = weights.shape
    V = f_in.shape[0]
    unit = STGCNUnit(STGCNUnitConfig(c_in, c_out, 1, 1, 0.0, residual=False), K, V, edge_importance=True)
    dt = E.get_default_dtype()
    # gcn output channel j*c_out + o carries subset j, output o
    unit.gcn.weight.data[...] = weights.transpose(0, 2, 1).reshape(K * c_out, c_in, 1, 1).astype(dt)
    unit.gcn.bias.data[...] = 0
    x = E.Tensor(f_in.T[None, :, None, :].astype(dt))
    with E.no_grad():
        out = unit.spatial(x, E.Tensor(normalized.astype(dt)))
    return out.data[0, :, 0, :].T.astype(np.float64)


def check_oracle_equivalence(count: int = 50, seed: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    err32 = err64 = 0.0
    for graph, strategy, stats in random_instances(rng, count):
        pa = decompose_adjacency(strategy, graph, stats)
        c_in, c_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        f_in = rng.uniform(-1.0, 1.0, size=(graph.num_joints, c_in))
        W = rng.uniform(-1.0, 1.0, size=(pa.num_subsets, c_in, c_out))
        ref = oracle.matrix_form_reference(f_in, pa.normalized, W)
        # a 32-bit instance is the same draw rounded to 32 bits, fed identically to both sides
        f32, a32, w32 = (v.astype(np.float32).astype(np.float64) for v in (f_in, pa.normalized, W))
        ref32 = oracle.matrix_form_reference(f32, a32, w32)
        with E.precision(np.float32):
            err32 = max(err32, float(np.abs(production_spatial_step(f32, a32, w32) - ref32).max()))
        with E.precision(np.float64):
            err64 = max(err64, float(np.abs(production_spatial_step(f_in, pa.normalized, W) - ref).max()))
    ok = err32 <= 1e-5 and err64 <= 1e-10
    return CheckResult("oracle-equivalence", ok, f"max abs error 32-bit {err32:.3g}, 64-bit {err64:.3g}",
                       max(err32, err64), time.perf_counter() - t0)


def factorized_st_conv(f_in: np.ndarray, pa_stack: np.ndarray, weights: np.ndarray, kernel: int) -> np.ndarray:
    """Production path (spatial contraction + Γ×1 conv) wired to reproduce labelled weights.

    ``f_in`` is (T, V) single-channel, ``weights`` is (Γ*K,) indexed by
    spatiotemporal label. The spatial step writes subset j into channel j;
    the temporal kernel then carries weight[j + g*K] at tap g.
    """
    K = pa_stack.shape[0]
    T, V = f_in.shape
    unit = STGCNUnit(STGCNUnitConfig(1, K, kernel, 1, 0.0, residual=False), K, V, edge_importance=False)
    dt = E.get_default_dtype()
    unit.gcn.weight.data[...] = 0
    for j in range(K):
        unit.gcn.weight.data[j * K + j, 0, 0, 0] = 1.0
    unit.gcn.bias.data[...] = 0
    tw = np.zeros((1, K, kernel, 1))
    for g in range(kernel):
        for j in range(K):
            tw[0, j, g, 0] = weights[j + g * K]
    with E.no_grad():
        x = E.Tensor(f_in[None, None].astype(dt))
        h = unit.spatial(x, E.Tensor(pa_stack.astype(dt)))
        y = E.conv2d_temporal(h, E.Tensor(tw.astype(dt)), 1)
    return y.data[0, 0].astype(np.float64)


def check_factorization(count: int = 12, seed: int = 2) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for graph, strategy, stats in random_instances(rng, count, max_joints=6):
        pa = decompose_adjacency(strategy, graph, stats)
        kernel = int(rng.choice([1, 3, 5]))
        T = int(rng.integers(1, 7))
        f_in = rng.normal(size=(T, graph.num_joints))
        w = rng.normal(size=kernel * pa.num_subsets)
        ref = oracle.st_conv_reference(f_in[..., None], graph, strategy, stats, kernel, w[:, None])[..., 0]
        with E.precision(np.float64):
            got = factorized_st_conv(f_in, oracle.cardinality_normalized(pa), w, kernel)
        worst = max(worst, float(np.abs(got - ref).max()))
    return CheckResult("factorized-equals-spatiotemporal", worst <= 1e-10, f"max abs error {worst:.3g}",
                       worst, time.perf_counter() - t0)


# ------------------------------------------------------------------ gradients

def op_cases(rng: np.random.Generator):
    """(name, builder) pairs; each builder returns (loss_fn, leaves) in the current precision."""
    def leaf(*shape):
        return E.Tensor(rng.normal(size=shape), requires_grad=True)

    def project(fn, leaves):
        probe = E.Tensor(rng.normal(size=fn().shape))
        return (lambda: E.sum_(E.mul(fn(), probe))), leaves

    def matmul():
        a, b = leaf(3, 4), leaf(4, 2)
        return project(lambda: E.matmul(a, b), {"a": a, "b": b})

    def bmatmul():
        a, b = leaf(2, 3, 4), leaf(2, 4, 2)
        return project(lambda: E.matmul(a, b), {"a": a, "b": b})

    def conv():
        x, w = leaf(2, 3, 7, 4), leaf(2, 3, 3, 1)
        return project(lambda: E.conv2d_temporal(x, w, 2), {"x": x, "w": w})

    def conv1x1():
        x, w = leaf(2, 3, 5, 4), leaf(4, 3, 1, 1)
        return project(lambda: E.conv2d_temporal(x, w, 1), {"x": x, "w": w})

    def contract():
        x, a = leaf(2, 3, 2, 3, 5), leaf(3, 5, 5)
        return project(lambda: E.graph_contract(x, a), {"x": x, "adj": a})

    def bn():
        x, g, b = leaf(2, 3, 4, 5), leaf(3), leaf(3)
        rm, rv = np.zeros(3), np.ones(3)
        return project(lambda: E.batch_norm(x, g, b, rm, rv, True), {"x": x, "gamma": g, "beta": b})

    def bias():
        x, b = leaf(2, 3, 4), leaf(3)
        return project(lambda: E.add_bias(x, b), {"x": x, "b": b})

    def elementwise():
        a, b = leaf(3, 4), leaf(3, 4)
        return project(lambda: E.relu(E.mul(a, b) + a), {"a": a, "b": b})

    def shapes():
        x = leaf(2, 3, 4)
        return project(lambda: E.permute(x, (2, 0, 1)).reshape(4, 6).mean(axis=1), {"x": x})

    def pool():
        x = leaf(2, 3, 4, 5)
        return project(lambda: E.global_avg_pool(x), {"x": x})

    def dropout():
        x = leaf(3, 4)
        seed = int(rng.integers(1 << 30))
        return project(lambda: E.dropout(x, 0.3, True, np.random.default_rng(seed)), {"x": x})

    def cross_entropy():
        z = leaf(4, 5)
        labels = rng.integers(0, 5, size=4)
        return (lambda: E.softmax_cross_entropy(z, labels)), {"logits": z}

    return [("matmul", matmul), ("batched_matmul", bmatmul), ("conv2d_temporal", conv),
            ("conv2d_pointwise", conv1x1), ("graph_contract", contract), ("batch_norm", bn),
            ("add_bias", bias), ("relu_mul_add", elementwise), ("reshape_permute_mean", shapes),
            ("global_avg_pool", pool), ("dropout", dropout), ("softmax_cross_entropy", cross_entropy)]


def unit_case(rng: np.random.Generator, strategy=Strategy.SPATIAL, stride: int = 2):
    V = 5
    graph = build_graph(random_connected_layout(rng, V, 1))
    stats = random_stats(rng, V) if Strategy.parse(strategy) is Strategy.SPATIAL else None
    pa = decompose_adjacency(strategy, graph, stats)
    unit = STGCNUnit(STGCNUnitConfig(3, 4, 3, stride, 0.0), pa.num_subsets, V)
    init_parameters(unit, int(rng.integers(1 << 30)))
    for _, p in unit.named_parameters():
        p.data += rng.normal(0, 0.1, p.shape)
    x = E.Tensor(rng.normal(size=(2, 3, 6, V)), requires_grad=True)
    adj = E.Tensor(pa.normalized)
    probe = E.Tensor(rng.normal(size=unit(x, adj, training=True).shape))
    leaves = dict(unit.named_parameters())
    leaves["x"] = x
    return (lambda: E.sum_(E.mul(unit(x, adj, training=True), probe))), leaves


def check_gradients_suite(seed: int = 3, eps: float = 1e-3, tol: float = 1e-3, unit_repeats: int = 3) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    with E.precision(np.float64):
        for name, build in op_cases(rng):
            t0 = time.perf_counter()
            fn, leaves = build()
            r = check_gradients(fn, leaves, eps)
            results.append(CheckResult(f"grad:{name}", r.ok(tol),
                                       f"max rel err {r.max_rel_error:.3g} over {r.checked} coords ({r.kinked} at kinks)",
                                       r.max_rel_error, time.perf_counter() - t0))
        for k, strategy in enumerate([Strategy.SPATIAL, Strategy.DISTANCE, Strategy.UNI][:unit_repeats]):
            t0 = time.perf_counter()
            fn, leaves = unit_case(rng, strategy, stride=2 if k % 2 == 0 else 1)
            r = check_gradients(fn, leaves, eps)
            results.append(CheckResult(f"grad:stgcn_unit[{strategy.value}]", r.ok(tol),
                                       f"max rel err {r.max_rel_error:.3g} over {r.checked} coords ({r.kinked} at kinks)",
                                       r.max_rel_error, time.perf_counter() - t0))
    return results


def measure_normalization_gap(count: int = 20, seed: int = 4) -> float:
    """Largest gap seen between cardinality (1/Z) and symmetric degree normalization."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for graph, strategy, stats in random_instances(rng, count):
        pa = decompose_adjacency(strategy, graph, stats)
        f_in = rng.normal(size=(graph.num_joints, 2))
        W = rng.normal(size=(pa.num_subsets, 2, 2))
        worst = max(worst, oracle.normalization_discrepancy(graph, pa, stats, f_in, W))
    return worst


@dataclass
class SelfTestReport:
    checks: list[CheckResult] = field(default_factory=list)
    normalization_gap: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "failed": [c.name for c in self.checks if not c.passed],
            "normalization_gap_cardinality_vs_symmetric": self.normalization_gap,
        }


def run_selftest(inject_fault: str | None = None) -> SelfTestReport:
    report = SelfTestReport()
    report.checks.append(check_partition(num_random=30, inject_fault=inject_fault == "partition-of-unity"))
    report.checks.append(check_oracle_equivalence(count=15))
    report.checks.append(check_factorization(count=6))
    report.checks.extend(check_gradients_suite(unit_repeats=1))
    report.normalization_gap = measure_normalization_gap(10)
    return report
