"""Central finite-difference checks of engine gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    kinked: int
    worst: str = ""

    def ok(self, tol: float = 1e-3) -> bool:
        return self.checked > 0 and self.max_rel_error <= tol


def rel_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _patterns_equal(p, q) -> bool:
    return len(p) == len(q) and all(np.array_equal(a, b) for a, b in zip(p, q))


def check_gradients(loss_fn, tensors: dict, eps: float = 1e-3, max_coords: int | None = None,
                    rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare backward() against (f(x+eps) - f(x-eps)) / 2eps coordinate by coordinate.

    ``loss_fn`` takes no arguments and returns a scalar Tensor built from the
    leaves in ``tensors``. Coordinates whose ±eps evaluations change any relu
    activation pattern straddle a kink, where the difference quotient is not a
    derivative estimate; they are counted in ``kinked`` and not compared.
    Run under ``precision(np.float64)``.
    """
    for t in tensors.values():
        t.zero_grad()
    with E.record_relu_patterns() as base:
        loss = loss_fn()
    loss.backward()
    worst, where, checked, kinked = 0.0, "", 0, 0
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1) if t.grad is not None else np.zeros_like(flat)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            with E.no_grad(), E.record_relu_patterns() as plus:
                lp = loss_fn().item()
            flat[i] = orig - eps
            with E.no_grad(), E.record_relu_patterns() as minus:
                lm = loss_fn().item()
            flat[i] = orig
            if not (_patterns_equal(base, plus) and _patterns_equal(base, minus)):
                kinked += 1
                continue
            err = rel_error((lp - lm) / (2 * eps), float(grad[i]))
            checked += 1
            if err > worst:
                worst, where = err, f"{name}[{i}]"
    return GradCheckResult(worst, checked, kinked, where)
