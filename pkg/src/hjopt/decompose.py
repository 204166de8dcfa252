"""Cartoon / texture / noise decomposition by two convex solves and a comparison.

The texture penalty is the minimum of two convex candidates (the scaled
dual-TV-ball indicator and the l1 norm), so the full model splits into two
convex programs.  In each, the noise component is eliminated analytically:
its inner minimum is the Moreau envelope of TV at parameter ``t2`` evaluated
at ``x - u1``, a smooth function with a ``1/t2``-Lipschitz gradient.  The
first program then runs projected gradient over the scaled dual ball (the
projection goes through the Moreau identity), the second forward-backward
with the l1 prox; both use step size ``t2``.  The winning program is chosen
by comparing the two minimal values under the shared tie tolerance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import GridGraph, Signal, TIE_ABS, TIE_REL, edge_arrays
from .errors import ConvergenceError, ParameterError
from .prox import TV_MAX_ITER, TV_TOL, dual_ball_distance, tv_prox_edges

DECOMPOSE_TOL = 1e-8
DECOMPOSE_MAX_ITER = 50000
# the stop rule requires this many consecutive iterations below tolerance
DECOMPOSE_STREAK = 10


@dataclass(frozen=True)
class ProblemReport:
    iterations: int
    inner_iterations: int
    relative_change: float
    converged: bool
    max_objective_increase: float


@dataclass(frozen=True)
class DecompositionResult:
    """Two candidate values, the winner, and the winning components.

    ``geometry + texture + noise == x`` exactly by construction.  ``winner``
    is ``"1"``, ``"2"``, or ``"both"`` (values tied within tolerance; the
    reported components then come from the first program, both attain the
    minimum).
    """

    s1: float
    s2: float
    winner: str
    geometry: Signal
    texture: Signal
    noise: Signal
    solver_report: dict


class _WarmTV:
    """TV prox/projection calls with per-slot warm-started dual variables."""

    def __init__(self, graph: GridGraph, tol, max_iter):
        self.ei, self.ej, self.w, self.norm_bound = edge_arrays(graph)
        self.tol = tol
        self.max_iter = max_iter
        self.duals = {}
        self.inner_iterations = 0

    def prox(self, x, strength, slot):
        lam = strength * self.w
        p0 = self.duals.get(slot)
        u, p, it, _ = tv_prox_edges(x, self.ei, self.ej, lam, self.norm_bound,
                                    self.tol, self.max_iter, p0=p0)
        self.duals[slot] = p
        self.inner_iterations += it
        return u

    def project(self, x, radius, slot):
        return x - self.prox(x, radius, slot)

    def tv_value(self, v):
        return float(self.w @ np.abs(v[self.ei] - v[self.ej])) if self.ei.size else 0.0


def _check_times(*ts):
    for t in ts:
        if not (t > 0 and math.isfinite(t)):
            raise ParameterError(f"time parameters must be > 0, got {t}")


def _descent_loop(n, step, tol, max_iter, inner_tol):
    """Shared monotone first-order loop with the 10-in-a-row stop rule.

    ``step(u1)`` returns ``(objective at u1, next u1)``; the objective must
    be non-increasing up to inner-prox inexactness, which is asserted.
    """
    u1 = np.zeros(n)
    prev = math.inf
    rel = math.inf
    streak = 0
    max_increase = 0.0
    slack = 50.0 * inner_tol
    it = 0
    for it in range(1, max_iter + 1):
        obj, u1_next = step(u1)
        if math.isfinite(prev):
            increase = obj - prev
            max_increase = max(max_increase, increase)
            if increase > slack * max(1.0, abs(prev)):
                raise ConvergenceError(
                    "objective increased along a descent iteration; "
                    "inner prox accuracy is insufficient",
                    residual=increase, iterations=it)
            rel = abs(increase) / max(1.0, abs(obj))
            streak = streak + 1 if rel <= tol else 0
            if streak >= DECOMPOSE_STREAK:
                break
        prev = obj
        u1 = u1_next
    if streak < DECOMPOSE_STREAK:
        raise ConvergenceError("decomposition solver hit its iteration cap",
                               residual=rel, iterations=it)
    return u1, it, rel, max_increase


def solve_s1(x: Signal, graph: GridGraph, t1: float, t2: float,
             tol=DECOMPOSE_TOL, max_iter=DECOMPOSE_MAX_ITER,
             inner_tol=TV_TOL, inner_max_iter=TV_MAX_ITER):
    """Texture constrained to the scaled dual ball: projected gradient on u1.

    Returns ``(value, u1, u2, report)`` where the value is
    ``TV(x - u1 - u2) + ||u2||^2 / (2 t2)`` with ``u1`` feasible for the
    ball indicator.
    """
    _check_times(t1, t2)
    xv = x.values
    warm = _WarmTV(graph, inner_tol, inner_max_iter)

    def objective(u1):
        v = warm.prox(xv - u1, t2, "envelope")
        u2 = xv - u1 - v
        return warm.tv_value(v) + float(u2 @ u2) / (2.0 * t2), v

    def step(u1):
        obj, v = objective(u1)
        # gradient step of length t2 on the envelope lands at x - prox(x - u1)
        return obj, warm.project(xv - v, t1, "ball")

    u1, it, rel, inc = _descent_loop(x.n, step, tol, max_iter, inner_tol)
    value, v = objective(u1)
    u2 = xv - u1 - v
    report = ProblemReport(it, warm.inner_iterations, rel, True, inc)
    return value, x.with_values(u1), x.with_values(u2), report


def solve_s2(x: Signal, graph: GridGraph, t2: float,
             tol=DECOMPOSE_TOL, max_iter=DECOMPOSE_MAX_ITER,
             inner_tol=TV_TOL, inner_max_iter=TV_MAX_ITER):
    """l1-penalized texture: forward-backward on u1 with soft thresholding.

    Returns ``(value, u1, u2, report)`` with value
    ``TV(x - u1 - u2) + ||u1||_1 + ||u2||^2 / (2 t2)``.
    """
    _check_times(t2)
    xv = x.values
    warm = _WarmTV(graph, inner_tol, inner_max_iter)

    def objective(u1):
        v = warm.prox(xv - u1, t2, "envelope")
        u2 = xv - u1 - v
        return (warm.tv_value(v) + float(np.abs(u1).sum())
                + float(u2 @ u2) / (2.0 * t2)), v

    def step(u1):
        obj, v = objective(u1)
        z = xv - v
        return obj, np.sign(z) * np.maximum(np.abs(z) - t2, 0.0)

    u1, it, rel, inc = _descent_loop(x.n, step, tol, max_iter, inner_tol)
    value, v = objective(u1)
    u2 = xv - u1 - v
    report = ProblemReport(it, warm.inner_iterations, rel, True, inc)
    return value, x.with_values(u1), x.with_values(u2), report


def dual_ball_membership(p: Signal, graph: GridGraph, tol=1e-6) -> bool:
    """Whether ``p`` lies in the dual ball K (support evaluation <= 1 + tol)."""
    scale = max(1.0, float(np.abs(p.values).max()))
    return dual_ball_distance(p.values, graph) <= tol * scale


def decompose(x: Signal, graph: GridGraph, t1: float, t2: float,
              tol=DECOMPOSE_TOL, max_iter=DECOMPOSE_MAX_ITER,
              inner_tol=TV_TOL, inner_max_iter=TV_MAX_ITER) -> DecompositionResult:
    """Solve both convex programs concurrently and select the winner."""
    _check_times(t1, t2)
    with ThreadPoolExecutor(max_workers=2) as pool:
        f1 = pool.submit(solve_s1, x, graph, t1, t2, tol, max_iter,
                         inner_tol, inner_max_iter)
        f2 = pool.submit(solve_s2, x, graph, t2, tol, max_iter,
                         inner_tol, inner_max_iter)
        s1, u1_a, u2_a, rep1 = f1.result()
        s2, u1_b, u2_b, rep2 = f2.result()

    tie = abs(s1 - s2) <= max(TIE_REL * max(abs(s1), abs(s2)), TIE_ABS)
    if tie:
        winner = "both"
        u1, u2 = u1_a, u2_a
    elif s1 < s2:
        winner = "1"
        u1, u2 = u1_a, u2_a
    else:
        winner = "2"
        u1, u2 = u1_b, u2_b
    geometry = x.with_values(x.values - u1.values - u2.values)
    return DecompositionResult(s1, s2, winner, geometry, u1, u2,
                               {"s1": rep1, "s2": rep2})
