"""Proximal operators and Moreau envelopes for every convex piece kind.

Closed forms are used wherever they exist (quadratic shrinkage, soft
thresholding, dual-ball projection through the Moreau identity, a direct
linear solve for the half-quadratic case).  The remaining case, weighted
anisotropic TV with ``f_base="abs"``, runs a first-order primal-dual solver
with fixed step sizes taken from the incidence-matrix norm bound.  An exact
taut-string solver for 1D chains is provided as an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .core import (
    ConvexPiece,
    DualTVBallIndicator,
    GridGraph,
    L1,
    Quadratic,
    Signal,
    WeightedTV,
    check_dimension,
    edge_arrays,
)
from .errors import ConvergenceError, ParameterError, UnsupportedTopologyError

# Iterative TV solver defaults: fixed-point residual target and iteration cap.
TV_TOL = 1e-8
TV_MAX_ITER = 20000


@dataclass(frozen=True)
class ProxResult:
    """Proximal point of a piece together with its Moreau-envelope value.

    ``certificate`` is the solver's fixed-point residual (0 for closed
    forms); it is at most the configured tolerance on success.
    """

    point: Signal
    envelope: float
    iterations: int = 0
    certificate: float = 0.0


def _check_t(t):
    if not (t > 0 and math.isfinite(t)):
        raise ParameterError(f"prox parameter t must be > 0, got {t}")


def tv_prox_edges(x, ei, ej, lam, norm_bound, tol=TV_TOL, max_iter=TV_MAX_ITER,
                  p0=None):
    """Primal-dual solve of ``min_u 1/2||u-x||^2 + sum_e lam_e |u_i - u_j|``.

    Fixed steps ``tau = sigma = 1/sqrt(norm_bound)`` with
    ``norm_bound >= ||K||^2`` for the signed incidence operator K.  Dual
    variables start at 0 unless ``p0`` warm-starts them (it is clipped into
    the feasible box first).  Returns ``(u, p, iterations, residual)``.

    Raises :class:`ConvergenceError` if the scaled fixed-point residual is
    still above ``tol`` at the iteration cap.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if ei.size == 0:
        return x.copy(), np.empty(0), 0, 0.0
    lam = np.broadcast_to(np.asarray(lam, dtype=float), ei.shape)
    step = 1.0 / math.sqrt(norm_bound)
    tau = sigma = step
    u = x.copy()
    ubar = u.copy()
    p = np.zeros(ei.size) if p0 is None else np.clip(p0, -lam, lam)
    scale = max(1.0, float(np.abs(x).max()))
    res = np.inf
    for it in range(1, max_iter + 1):
        p_new = np.clip(p + sigma * (ubar[ei] - ubar[ej]), -lam, lam)
        ktp = np.bincount(ei, p_new, n) - np.bincount(ej, p_new, n)
        u_new = (u - tau * ktp + tau * x) / (1.0 + tau)
        res = max(float(np.abs(u_new - u).max()) / tau,
                  float(np.abs(p_new - p).max()) / sigma) / scale
        ubar = 2.0 * u_new - u
        u = u_new
        p = p_new
        if res <= tol:
            return u, p, it, res
    raise ConvergenceError("TV prox did not converge", residual=res,
                           iterations=max_iter)


def tv_prox_graph(x, graph: GridGraph, strength, tol=TV_TOL,
                  max_iter=TV_MAX_ITER, p0=None):
    """Prox of ``strength * TV_w`` on a graph; see :func:`tv_prox_edges`."""
    ei, ej, w, norm_bound = edge_arrays(graph)
    return tv_prox_edges(x, ei, ej, strength * w, norm_bound, tol, max_iter, p0)


def _half_quadratic_prox(x, ei, ej, w, t):
    # minimizer of ||x-u||^2/(2t) + sum_e w_e (u_i-u_j)^2 solves (I + 2t L) u = x
    n = x.size
    if ei.size == 0:
        return x.copy()
    rows = np.concatenate([ei, ej, ei, ej])
    cols = np.concatenate([ej, ei, ei, ej])
    vals = np.concatenate([-w, -w, w, w])
    lap = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A = scipy.sparse.identity(n, format="csr") + 2.0 * t * lap
    if n <= 512:
        return np.linalg.solve(A.toarray(), x)
    return scipy.sparse.linalg.spsolve(A.tocsc(), x)


def dual_ball_distance(p, graph: GridGraph, tau=1e3, tol=TV_TOL,
                       max_iter=TV_MAX_ITER):
    """Euclidean distance from ``p`` to the dual ball K of the graph's TV.

    Uses ``prox_{tau*TV}(tau*p) = tau * (p - proj_K(p))``, so the scaled prox
    norm is exactly the distance; ``tau`` large sharpens the membership test.
    """
    p = np.asarray(p, dtype=float)
    u, _, _, _ = tv_prox_graph(tau * p, graph, tau, tol=tol, max_iter=max_iter)
    return float(np.linalg.norm(u)) / tau


def project_dual_tv_ball(x, graph: GridGraph, radius, tol=TV_TOL,
                         max_iter=TV_MAX_ITER, p0=None):
    """Projection onto ``radius * K`` via ``x - prox_{radius*TV}(x)``.

    Returns ``(point, p, iterations, residual)`` with ``p`` the TV solver's
    dual state (reusable as a warm start).
    """
    x = np.asarray(x, dtype=float)
    u, p, it, res = tv_prox_graph(x, graph, radius, tol, max_iter, p0)
    return x - u, p, it, res


def prox(piece: ConvexPiece, x: Signal, t: float, tol=TV_TOL,
         max_iter=TV_MAX_ITER) -> ProxResult:
    """Proximal point ``argmin_u J(u) + ||x - u||^2 / (2t)`` and its envelope.

    Closed forms: quadratic pieces shrink toward the center, the l1 norm
    soft-thresholds (ties at the threshold map to exactly 0), the dual-ball
    indicator projects through the Moreau identity, and the half-quadratic
    graph term is a direct linear solve.  Weighted TV with ``f_base="abs"``
    runs the iterative primal-dual solver.
    """
    _check_t(t)
    check_dimension(piece, x)
    xv = x.values

    if isinstance(piece, Quadratic):
        s2 = piece.scale**2
        point = (s2 * xv + t * piece.center.values) / (s2 + t)
        d = point - piece.center.values
        env = float(d @ d) / (2.0 * s2) + float((xv - point) @ (xv - point)) / (2.0 * t)
        return ProxResult(x.with_values(point), env)

    if isinstance(piece, L1):
        thr = piece.weight * t
        point = np.sign(xv) * np.maximum(np.abs(xv) - thr, 0.0)
        env = piece.weight * float(np.abs(point).sum()) \
            + float((xv - point) @ (xv - point)) / (2.0 * t)
        return ProxResult(x.with_values(point), env)

    if isinstance(piece, DualTVBallIndicator):
        point, _, it, res = project_dual_tv_ball(xv, piece.graph, piece.radius,
                                                 tol, max_iter)
        env = float((xv - point) @ (xv - point)) / (2.0 * t)
        return ProxResult(x.with_values(point), env, it, res)

    if isinstance(piece, WeightedTV):
        ei, ej, w = piece.active_arrays()
        const = piece.truncation_constant()
        if piece.f_base == "square":
            point = _half_quadratic_prox(xv, ei, ej, t * w, 1.0)
            it, res = 0, 0.0
        else:
            _, _, _, norm_bound = edge_arrays(piece.graph)
            point, _, it, res = tv_prox_edges(xv, ei, ej, t * w, norm_bound,
                                              tol, max_iter)
        diff = point[ei] - point[ej] if ei.size else np.empty(0)
        base = np.abs(diff) if piece.f_base == "abs" else diff * diff
        env = const + float(w @ base) \
            + float((xv - point) @ (xv - point)) / (2.0 * t)
        return ProxResult(x.with_values(point), env, it, res)

    raise TypeError(f"not a convex piece: {piece!r}")


def moreau_envelope(piece: ConvexPiece, x: Signal, t: float, tol=TV_TOL,
                    max_iter=TV_MAX_ITER):
    """Envelope value and its gradient ``(x - prox_point) / t``."""
    r = prox(piece, x, t, tol, max_iter)
    grad = (x.values - r.point.values) / t
    return r.envelope, x.with_values(grad)


def tv_prox_1d_exact(signal: Signal, weights, t: float) -> Signal:
    """Exact minimizer of ``1/2||x-u||^2 + t * sum_k w_k |u_{k+1}-u_k|``.

    Taut-string construction: the solution is the slope sequence of the
    shortest path through the tube of half-width ``t*w_k`` around the
    cumulative sums.  Chains only; worst case O(n^2) from anchor rescans.
    """
    _check_t(t)
    x = signal.values
    n = x.size
    if n == 1:
        return signal
    w = np.broadcast_to(np.asarray(weights, dtype=float), (n - 1,))
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ParameterError("edge weights must be finite and >= 0")
    mid = np.concatenate([[0.0], np.cumsum(x)])
    rad = np.zeros(n + 1)
    rad[1:n] = t * w
    slopes = np.empty(n)
    a = 0
    sa = 0.0
    while a < n:
        min_up = np.inf
        arg_up = -1
        max_lo = -np.inf
        arg_lo = -1
        k = a + 1
        bent = False
        while k <= n:
            d = k - a
            s_up = (mid[k] + rad[k] - sa) / d
            s_lo = (mid[k] - rad[k] - sa) / d
            if s_lo > min_up:
                # corridor closed from below: string touches the upper bound
                slopes[a:arg_up] = min_up
                sa = mid[arg_up] + rad[arg_up]
                a = arg_up
                bent = True
                break
            if s_up < max_lo:
                slopes[a:arg_lo] = max_lo
                sa = mid[arg_lo] - rad[arg_lo]
                a = arg_lo
                bent = True
                break
            if s_up < min_up:
                min_up, arg_up = s_up, k
            if s_lo > max_lo:
                max_lo, arg_lo = s_lo, k
            k += 1
        if not bent:
            slopes[a:n] = (mid[n] - sa) / (n - a)
            a = n
    return signal.with_values(slopes)


def tv_prox_1d_exact_graph(signal: Signal, graph: GridGraph, t: float) -> Signal:
    """:func:`tv_prox_1d_exact` addressed by a graph; rejects non-chains."""
    if graph.n != signal.n or not graph.is_chain():
        raise UnsupportedTopologyError("exact 1D TV prox requires a chain graph")
    return tv_prox_1d_exact(signal, graph.chain_weights(), t)
