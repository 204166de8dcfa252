"""Posterior-mean estimation through the smoothed (viscous) evolution.

The smoothed value ``S_eps`` is the negative scaled log of the Gaussian-
smoothed partition integral of the objective; its spatial gradient gives the
posterior mean (``u_pm = x - t * grad``) and its Laplacian gives the minimum
mean squared error (``mmse = n*t*eps - t^2*eps*lap``).  Gaussian pieces have
closed forms in any dimension; other pieces are integrated by adaptive
quadrature in one dimension, coordinate-separably for the l1 norm, or on a
2D box.  Mixture priors combine per-piece solutions through a stabilized
log-sum-exp and weight their posterior means accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import dblquad, quad

from .core import (
    ConvexPiece,
    DualTVBallIndicator,
    L1,
    Quadratic,
    Signal,
    WeightedTV,
    check_dimension,
    evaluate_piece,
    piece_infimum,
)
from .errors import AccuracyError, ParameterError, UnsupportedModelError
from .minplus import minplus_solve, parallel_map

# Quadrature paths refuse eps below this floor; closed forms take any eps > 0.
EPS_FLOOR = 1e-4

_QUAD_OPTS = dict(limit=200, epsabs=1e-300, epsrel=1e-12)
_LAPLACIAN_STEP = 1e-3


@dataclass(frozen=True)
class PosteriorStats:
    """Smoothed value, its spatial derivatives, and the Bayes-optimal outputs.

    ``posterior_mean`` always satisfies ``x - t * gradient`` to evaluation
    tolerance; ``mmse`` is computed from the Laplacian identity.  ``weights``
    is filled only by mixture combinations (normalized per-piece weights).
    """

    value: float
    gradient: Signal
    posterior_mean: Signal
    mmse: float
    method: str
    laplacian: Optional[float] = None
    weights: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class MixturePrior:
    """Initial data ``-eps * ln(sum_i exp(-J_i / eps))`` over convex pieces.

    Lies within ``eps * ln(m)`` below ``min_i J_i`` pointwise.
    """

    pieces: tuple[ConvexPiece, ...]
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces:
            raise ParameterError("mixture needs at least one piece")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ParameterError(f"mixture epsilon must be > 0, got {self.epsilon}")

    def initial_value(self, u: Signal) -> float:
        vals = np.array([evaluate_piece(p, u) for p in self.pieces])
        finite = vals[np.isfinite(vals)]
        if finite.size == 0:
            return math.inf
        a = -finite / self.epsilon
        amax = a.max()
        return float(-self.epsilon * (amax + math.log(np.exp(a - amax).sum())))


def _check_params(t, eps):
    if not (t > 0 and math.isfinite(t)):
        raise ParameterError(f"t must be > 0, got {t}")
    if not (eps > 0 and math.isfinite(eps)):
        raise ParameterError(f"eps must be > 0, got {eps}")


def _check_floor(eps):
    if eps < EPS_FLOOR:
        raise ParameterError(
            f"quadrature path requires eps >= {EPS_FLOOR}, got {eps}")


def _gaussian_stats(piece: Quadratic, x: Signal, t, eps) -> PosteriorStats:
    s2 = piece.scale**2
    denom = s2 + t
    d = x.values - piece.center.values
    n = x.n
    value = 0.5 * n * eps * math.log(denom / s2) + float(d @ d) / (2.0 * denom)
    grad = d / denom
    lap = n / denom
    return PosteriorStats(value, x.with_values(grad),
                          x.with_values(x.values - t * grad),
                          n * t * eps - t * t * eps * lap,
                          "closed_form", laplacian=lap)


def _constant_stats(const, x: Signal, t, eps) -> PosteriorStats:
    zeros = x.with_values(np.zeros(x.n))
    return PosteriorStats(const, zeros, x, x.n * t * eps, "closed_form",
                          laplacian=0.0)


def scalar_initial_value(piece: ConvexPiece, coordinate: int = 0) -> Callable:
    """Vectorized single-coordinate section of a piece usable in 1D quadrature."""
    if isinstance(piece, Quadratic):
        mu = float(piece.center.values[coordinate])
        s2 = piece.scale**2
        return lambda u: (u - mu) ** 2 / (2.0 * s2)
    if isinstance(piece, L1):
        w = piece.weight
        return lambda u: w * np.abs(u)
    if isinstance(piece, WeightedTV) and piece.graph.n == 1:
        const = piece.truncation_constant()
        return lambda u: const * np.ones_like(np.asarray(u, dtype=float))
    raise UnsupportedModelError(
        f"{type(piece).__name__} has no single-coordinate section")


def _quad(f, lo, hi, points):
    out = quad(f, lo, hi, points=points, full_output=1, **_QUAD_OPTS)
    val, abserr = out[0], out[1]
    return val, abserr


def _refine_feature(jf, x, t, a, b, mode):
    """Shrink a bracket around a minimizer or a kink of the 1D objective."""
    for _ in range(6):
        g = np.linspace(a, b, 129)
        G = np.asarray(jf(g), dtype=float) + (x - g) ** 2 / (2.0 * t)
        if mode == "min":
            k = int(np.argmin(G))
        else:
            d2 = np.abs(G[2:] - 2.0 * G[1:-1] + G[:-2])
            k = int(np.argmax(d2)) + 1
        a, b = g[max(k - 1, 0)], g[min(k + 1, g.size - 1)]
    return 0.5 * (a + b)


def _interval_1d(jf, x, t, eps, hint):
    """Integration interval, offset, and refined feature points of the integrand.

    Feature points (the objective's minimizer plus any kinks found from
    second-difference spikes of the scan) are refined to near machine
    precision; quadrature breakpoints that sit close to but not exactly at a
    kink can silently defeat the integrator's error estimate.
    """
    radius = max(10.0 * math.sqrt(t * eps), abs(x) + 10.0 * hint)
    for _ in range(60):
        lo, hi = x - radius, x + radius
        grid = np.linspace(lo, hi, 4097)
        G = np.asarray(jf(grid), dtype=float) + (x - grid) ** 2 / (2.0 * t)
        finite = np.isfinite(G)
        if not finite.any():
            raise AccuracyError("objective is +inf on the whole interval")
        M = float(G[finite].min())
        with np.errstate(over="ignore"):
            edge = max(math.exp(-(G[0] - M) / eps) if finite[0] else 0.0,
                       math.exp(-(G[-1] - M) / eps) if finite[-1] else 0.0)
        if edge < 1e-16:
            break
        radius *= 2.0
    else:
        raise AccuracyError("integration interval failed to capture the integrand")

    k0 = int(np.argmin(np.where(finite, G, np.inf)))
    ustar = _refine_feature(jf, x, t, grid[max(k0 - 1, 0)],
                            grid[min(k0 + 1, grid.size - 1)], "min")
    M = min(M, float(jf(ustar)) + (x - ustar) ** 2 / (2.0 * t))

    features = [ustar]
    with np.errstate(invalid="ignore"):
        d2 = np.abs(G[2:] - 2.0 * G[1:-1] + G[:-2])
    d2 = np.where(np.isfinite(d2), d2, 0.0)
    threshold = 25.0 * float(np.median(d2)) + 1e-12 * (1.0 + abs(M))
    spikes = [k + 1 for k in np.argsort(d2)[::-1][:16] if d2[k] > threshold]
    picked = []
    for k in sorted(spikes):
        if picked and k - picked[-1] <= 2:
            continue  # one feature per spike cluster
        picked.append(k)
    for k in picked[:6]:
        features.append(_refine_feature(jf, x, t, grid[k - 1], grid[k + 1],
                                        "kink"))
    span = hi - lo
    features = sorted({p for p in features if lo + 1e-12 * span < p < hi - 1e-12 * span})
    deduped = []
    for p in features:
        if not deduped or p - deduped[-1] > 1e-12 * span:
            deduped.append(p)
    return lo, hi, M, ustar, deduped


def _partition_1d(jf, x, t, eps, hint):
    """Smoothed value for one coordinate: ``M - eps*ln(Ztilde) + eps/2*ln(2 pi t eps)``."""
    lo, hi, M, ustar, features = _interval_1d(jf, x, t, eps, hint)

    def weight(u):
        return math.exp(-(float(jf(u)) + (x - u) ** 2 / (2.0 * t) - M) / eps)

    z, err = _quad(weight, lo, hi, features)
    if not (z > 0.0) or err > 1e-8 * z:
        raise AccuracyError(
            f"partition integral unreliable (value {z:.3e}, error {err:.3e})")
    value = M - eps * math.log(z) + 0.5 * eps * math.log(2.0 * math.pi * t * eps)
    return value, z, (lo, hi, M, ustar, features)


def _stats_1d(jf, x, t, eps, hint):
    """All 1D posterior quantities for one coordinate by adaptive quadrature."""
    value, z, (lo, hi, M, ustar, features) = _partition_1d(jf, x, t, eps, hint)

    def weight(u):
        return math.exp(-(float(jf(u)) + (x - u) ** 2 / (2.0 * t) - M) / eps)

    m1, e1 = _quad(lambda u: (u - ustar) * weight(u), lo, hi, features)
    g, e2 = _quad(lambda u: ((x - u) / t) * weight(u), lo, hi, features)
    if max(e1, e2) > 1e-8 * z * max(1.0, hi - lo):
        raise AccuracyError("posterior moment integrals unreliable")
    upm = ustar + m1 / z
    grad = g / z
    var, _ = _quad(lambda u: (u - upm) ** 2 * weight(u), lo, hi, features)
    var /= z
    h = _LAPLACIAN_STEP
    s_plus, _, _ = _partition_1d(jf, x + h, t, eps, hint)
    s_minus, _, _ = _partition_1d(jf, x - h, t, eps, hint)
    lap = (s_plus - 2.0 * value + s_minus) / (h * h)
    return dict(value=value, grad=grad, upm=upm, var=var, lap=lap)


def posterior_stats_1d(initial_value_fn, x: float, t: float, eps: float,
                       hint: float = 1.0) -> PosteriorStats:
    """Posterior statistics for arbitrary vectorized 1D initial data.

    This is the generic quadrature route; it is also the independent check
    for closed forms and for mixture combinations.
    """
    _check_params(t, eps)
    _check_floor(eps)
    st = _stats_1d(initial_value_fn, float(x), t, eps, hint)
    sig = Signal(np.array([x]), (1,))
    return PosteriorStats(st["value"], sig.with_values([st["grad"]]),
                          sig.with_values([st["upm"]]),
                          t * eps - t * t * eps * st["lap"],
                          "quadrature", laplacian=st["lap"])


def _piece_hint(piece: ConvexPiece) -> float:
    if isinstance(piece, Quadratic):
        return piece.scale + float(np.abs(piece.center.values).max())
    if isinstance(piece, L1):
        return 1.0 + 1.0 / max(piece.weight, 0.1)
    return 1.0


def _separable_stats(piece: L1, x: Signal, t, eps) -> PosteriorStats:
    hint = _piece_hint(piece)
    per = [_stats_1d(scalar_initial_value(piece, k), float(xk), t, eps, hint)
           for k, xk in enumerate(x.values)]
    value = sum(s["value"] for s in per)
    lap = sum(s["lap"] for s in per)
    n = x.n
    return PosteriorStats(value,
                          x.with_values([s["grad"] for s in per]),
                          x.with_values([s["upm"] for s in per]),
                          n * t * eps - t * t * eps * lap,
                          "quadrature", laplacian=lap)


def _pair_initial_value(piece: WeightedTV):
    # the base term is even in the difference, so edge orientation is moot
    _, _, w = piece.graph.edges[0]
    f = np.abs if piece.f_base == "abs" else np.square

    def jf(a, b):
        return w * f(np.asarray(a, dtype=float) - b)

    return jf


def _interval_2d(jf2, x1, x2, t, eps, hint):
    radius = max(10.0 * math.sqrt(t * eps),
                 max(abs(x1), abs(x2)) + 10.0 * hint)
    for _ in range(40):
        g1 = np.linspace(x1 - radius, x1 + radius, 257)
        g2 = np.linspace(x2 - radius, x2 + radius, 257)
        U1, U2 = np.meshgrid(g1, g2, indexing="ij")
        G = jf2(U1, U2) + ((x1 - U1) ** 2 + (x2 - U2) ** 2) / (2.0 * t)
        M = float(G.min())
        rim = np.concatenate([G[0, :], G[-1, :], G[:, 0], G[:, -1]])
        if math.exp(-(float(rim.min()) - M) / eps) < 1e-16:
            return (x1 - radius, x1 + radius, x2 - radius, x2 + radius, M)
        radius *= 2.0
    raise AccuracyError("2D integration box failed to capture the integrand")


def _integrate_2d(f, box, inner_points=None):
    """Nested adaptive quadrature; the pairwise term has its kink at u2 = u1."""
    lo1, hi1, lo2, hi2 = box

    def outer(u1):
        pts = [u1] if inner_points is None else inner_points(u1)
        pts = [p for p in pts if lo2 < p < hi2]
        val, _ = quad(lambda u2: f(u1, u2), lo2, hi2, points=pts or None,
                      limit=200, epsabs=1e-300, epsrel=1e-11)
        return val

    val, err = quad(outer, lo1, hi1, limit=200, epsabs=1e-300, epsrel=1e-10)
    return val, err


def _partition_2d(jf2, x1, x2, t, eps, hint):
    lo1, hi1, lo2, hi2, M = _interval_2d(jf2, x1, x2, t, eps, hint)

    def weight(u1, u2):
        G = float(jf2(u1, u2)) + ((x1 - u1) ** 2 + (x2 - u2) ** 2) / (2.0 * t)
        return math.exp(-(G - M) / eps)

    z, err = _integrate_2d(weight, (lo1, hi1, lo2, hi2))
    if not (z > 0.0) or err > 1e-7 * z:
        raise AccuracyError(
            f"2D partition integral unreliable (value {z:.3e}, error {err:.3e})")
    return (M - eps * math.log(z) + eps * math.log(2.0 * math.pi * t * eps),
            z, (lo1, hi1, lo2, hi2, M))


def _stats_2d(jf2, x: Signal, t, eps, hint) -> PosteriorStats:
    x1, x2 = (float(v) for v in x.values)
    value, z, (lo1, hi1, lo2, hi2, M) = _partition_2d(jf2, x1, x2, t, eps, hint)
    box = (lo1, hi1, lo2, hi2)

    def weight(u1, u2):
        G = float(jf2(u1, u2)) + ((x1 - u1) ** 2 + (x2 - u2) ** 2) / (2.0 * t)
        return math.exp(-(G - M) / eps)

    def moment(f):
        val, _ = _integrate_2d(lambda a, b: f(a, b) * weight(a, b), box)
        return val / z

    upm = np.array([moment(lambda a, b: a), moment(lambda a, b: b)])
    grad = np.array([moment(lambda a, b: (x1 - a) / t),
                     moment(lambda a, b: (x2 - b) / t)])
    h = _LAPLACIAN_STEP
    lap = 0.0
    for a, b in ((h, 0.0), (0.0, h)):
        sp, _, _ = _partition_2d(jf2, x1 + a, x2 + b, t, eps, hint)
        sm, _, _ = _partition_2d(jf2, x1 - a, x2 - b, t, eps, hint)
        lap += (sp - 2.0 * value + sm) / (h * h)
    n = 2
    return PosteriorStats(value, x.with_values(grad), x.with_values(upm),
                          n * t * eps - t * t * eps * lap,
                          "quadrature", laplacian=lap)


def s_epsilon(piece: ConvexPiece, x: Signal, t: float, eps: float) -> PosteriorStats:
    """Smoothed value, gradient, posterior mean, and mmse for one convex piece.

    The piece is shifted so its infimum is 0 before integrating (the shift is
    added back to the reported value), keeping the smoothing hypotheses
    satisfied without burdening callers.  Gaussian pieces use closed forms in
    any dimension; quadrature covers n = 1, coordinate-separable l1 in any n,
    and pairwise terms on two pixels.
    """
    _check_params(t, eps)
    check_dimension(piece, x)
    if isinstance(piece, Quadratic):
        return _gaussian_stats(piece, x, t, eps)
    if isinstance(piece, DualTVBallIndicator):
        raise AccuracyError(
            "partition integral vanishes: the dual-ball indicator is "
            "supported on a Lebesgue-null set")
    if isinstance(piece, WeightedTV):
        ei, _, _ = piece.active_arrays()
        if ei.size == 0:
            return _constant_stats(piece.truncation_constant(), x, t, eps)
    _check_floor(eps)
    shift = piece_infimum(piece)
    if isinstance(piece, L1):
        return _separable_stats(piece, x, t, eps)
    if x.n == 1:
        jf = scalar_initial_value(piece)
        st = _stats_1d(lambda u: np.asarray(jf(u)) - shift, float(x.values[0]),
                       t, eps, _piece_hint(piece))
        return PosteriorStats(st["value"] + shift,
                              x.with_values([st["grad"]]),
                              x.with_values([st["upm"]]),
                              t * eps - t * t * eps * st["lap"],
                              "quadrature", laplacian=st["lap"])
    if x.n == 2 and isinstance(piece, WeightedTV) and piece.graph.n_edges == 1:
        jf2 = _pair_initial_value(piece)
        st = _stats_2d(lambda a, b: jf2(a, b) - shift, x, t, eps,
                       _piece_hint(piece))
        return PosteriorStats(st.value + shift, st.gradient,
                              st.posterior_mean, st.mmse, st.method,
                              laplacian=st.laplacian)
    raise UnsupportedModelError(
        f"no evaluation path for {type(piece).__name__} at n={x.n}")


def posterior_mean(piece: ConvexPiece, x: Signal, t: float, eps: float) -> Signal:
    """Posterior-mean estimate ``x - t * grad`` of the smoothed value."""
    return s_epsilon(piece, x, t, eps).posterior_mean


def mmse(piece: ConvexPiece, x: Signal, t: float, eps: float) -> float:
    """Minimum mean squared error via the Laplacian identity."""
    return s_epsilon(piece, x, t, eps).mmse


def posterior_variance(piece: ConvexPiece, x: Signal, t: float, eps: float) -> float:
    """Posterior second moment about the posterior mean, by direct quadrature.

    Independent cross-check route for :func:`mmse`: always integrates, even
    for pieces whose primary path is a closed form.  Supports n = 1 and the
    separable l1 norm.
    """
    _check_params(t, eps)
    _check_floor(eps)
    check_dimension(piece, x)
    t_ = float(t)
    hint = _piece_hint(piece)
    total = 0.0
    for k, xk in enumerate(x.values):
        jf = scalar_initial_value(piece, k)
        total += _stats_1d(jf, float(xk), t_, eps, hint)["var"]
    return total


def mixture_s_epsilon(prior: MixturePrior, x: Signal, t: float,
                      threads: Optional[int] = None) -> PosteriorStats:
    """Combine per-piece smoothed solutions for a mixture prior.

    The combined value is a stabilized log-sum-exp of the per-piece values;
    the posterior mean is the weight-averaged per-piece posterior mean; the
    Laplacian combines per-piece Laplacians and gradients exactly.  The
    normalized per-piece weights are exposed on the result.
    """
    _check_params(t, prior.epsilon)
    eps = prior.epsilon
    per = parallel_map(lambda p: s_epsilon(p, x, t, eps), prior.pieces, threads)
    if len(per) == 1:
        return per[0]
    values = np.array([st.value for st in per])
    a = -values / eps
    amax = a.max()
    w = np.exp(a - amax)  # max weight exactly 1 by construction
    wsum = float(w.sum())
    value = float(-eps * (amax + math.log(wsum)))
    wn = w / wsum
    grads = np.stack([st.gradient.values for st in per])
    means = np.stack([st.posterior_mean.values for st in per])
    grad = wn @ grads
    upm = wn @ means
    laps = np.array([st.laplacian for st in per])
    lap = float(wn @ laps
                - (np.dot(wn, np.einsum("ij,ij->i", grads, grads))
                   - float(grad @ grad)) / eps)
    n = x.n
    return PosteriorStats(value, x.with_values(grad), x.with_values(upm),
                          n * t * eps - t * t * eps * lap,
                          "logsumexp_combination", laplacian=lap,
                          weights=tuple(float(v) for v in wn))


@dataclass(frozen=True)
class LimitRow:
    eps: float
    value: float
    value_gap: float
    estimator_gap: Optional[float]
    bound: float
    bound_holds: Optional[bool]


@dataclass(frozen=True)
class LimitReport:
    """Small-eps behaviour of the smoothed solution against the sharp one."""

    rows: tuple[LimitRow, ...]
    sharp_value: float
    map_unique: bool


def epsilon_limit_check(pieces: Union[ConvexPiece, Sequence[ConvexPiece]],
                        x: Signal, t: float, eps_sequence) -> LimitReport:
    """Track ``|S_eps - S_0|`` and the posterior-mean-to-MAP gap along eps.

    The gap bound ``||u_pm - u_map||^2 <= n*t*eps`` is only checked when the
    sharp minimizer is unique (a tie in the active set skips the check with
    ``bound_holds = None``).  The sequence must be strictly decreasing.
    """
    if isinstance(pieces, (Quadratic, WeightedTV, L1, DualTVBallIndicator)):
        pieces = [pieces]
    pieces = list(pieces)
    eps_sequence = [float(e) for e in eps_sequence]
    if any(e <= 0 for e in eps_sequence):
        raise ParameterError("eps values must be > 0")
    if any(b >= a for a, b in zip(eps_sequence, eps_sequence[1:])):
        raise ParameterError("eps sequence must be strictly decreasing")

    sharp = minplus_solve(pieces, x, t)
    unique = len(sharp.active_set) == 1
    u_map = sharp.minimizers[0].values if unique else None

    rows = []
    for eps in eps_sequence:
        if len(pieces) == 1:
            st = s_epsilon(pieces[0], x, t, eps)
        else:
            st = mixture_s_epsilon(MixturePrior(tuple(pieces), eps), x, t)
        gap = None
        holds = None
        bound = x.n * t * eps
        if unique:
            gap = float(np.linalg.norm(st.posterior_mean.values - u_map))
            holds = gap * gap <= bound
        rows.append(LimitRow(eps, st.value, abs(st.value - sharp.value),
                             gap, bound, holds))
    return LimitReport(tuple(rows), sharp.value, unique)
