"""Domain types: signals, pairwise-interaction graphs, convex pieces, time parameters.

All types are immutable values and all operations are pure, so everything in
this module is safe to share between threads.  The extended real line is
represented with IEEE ``math.inf`` (``float("inf")``), which satisfies
``finite + inf == inf``; only indicator-type pieces ever return it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatchError,
    OutsideDomainError,
    ParameterError,
)

INF = math.inf

# Shared tie tolerance for argmin index sets: values within a relative 1e-9
# band (absolute 1e-12 near zero) of the minimum count as tied.
TIE_REL = 1e-9
TIE_ABS = 1e-12


def tied_indices(values: Sequence[float]) -> tuple[float, tuple[int, ...]]:
    """Minimum of ``values`` and the indices within tie tolerance of it."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ParameterError("empty value list")
    vmin = float(np.min(arr))
    tol = max(TIE_REL * abs(vmin), TIE_ABS)
    idx = tuple(int(i) for i in np.flatnonzero(arr - vmin <= tol))
    return vmin, idx


@dataclass(frozen=True, eq=False)
class Signal:
    """A real n-vector of intensities, optionally carrying a (rows, cols) shape.

    ``values`` is stored flattened in row-major order and is read-only.
    """

    values: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float).ravel()
        if arr.size < 1:
            raise ParameterError("signal must have at least one entry")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("signal entries must be finite")
        shape = tuple(int(s) for s in self.shape)
        if math.prod(shape) != arr.size:
            raise DimensionMismatchError(
                f"shape {shape} does not match {arr.size} values"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "shape", shape)

    @property
    def n(self) -> int:
        return self.values.size

    def as_image(self) -> np.ndarray:
        """Values reshaped to ``shape`` (a view; still read-only)."""
        return self.values.reshape(self.shape)

    def with_values(self, values) -> "Signal":
        return Signal(np.asarray(values, dtype=float), self.shape)

    def __repr__(self):
        return f"Signal(n={self.n}, shape={self.shape})"


def as_signal(data, shape=None) -> Signal:
    """Coerce an array-like (or scalar) to a :class:`Signal`."""
    if isinstance(data, Signal):
        return data
    arr = np.atleast_1d(np.asarray(data, dtype=float))
    if shape is None:
        shape = arr.shape if arr.ndim <= 2 else (arr.size,)
    return Signal(arr, tuple(shape))


@dataclass(frozen=True)
class GridGraph:
    """Edge set with nonnegative weights defining pairwise interactions.

    Edges are distinct unordered pairs ``(i, j)`` with ``i != j``; each edge
    carries one weight.  Arbitrary graphs are accepted; the common case is a
    4-neighborhood grid built by :meth:`grid`.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError("graph needs at least one node")
        seen = set()
        edges = []
        for e in self.edges:
            i, j, w = int(e[0]), int(e[1]), float(e[2])
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ParameterError(f"edge ({i},{j}) out of range for n={self.n}")
            if i == j:
                raise ParameterError(f"self-edge ({i},{i}) not allowed")
            if not (math.isfinite(w) and w >= 0.0):
                raise ParameterError(f"edge ({i},{j}) weight {w} must be finite and >= 0")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ParameterError(f"duplicate edge for unordered pair {key}")
            seen.add(key)
            edges.append((i, j, w))
        object.__setattr__(self, "edges", tuple(edges))

    @classmethod
    def grid(cls, rows: int, cols: int, weight: float = 1.0) -> "GridGraph":
        """4-neighborhood grid on ``rows x cols`` pixels with uniform weight."""
        edges = []
        for r in range(rows):
            for c in range(cols):
                i = r * cols + c
                if c + 1 < cols:
                    edges.append((i, i + 1, weight))
                if r + 1 < rows:
                    edges.append((i, i + cols, weight))
        return cls(rows * cols, tuple(edges))

    @classmethod
    def chain(cls, n: int, weights=1.0) -> "GridGraph":
        """Path graph on ``n`` nodes; ``weights`` is a scalar or n-1 values."""
        w = np.broadcast_to(np.asarray(weights, dtype=float), (max(n - 1, 0),))
        return cls(n, tuple((i, i + 1, float(w[i])) for i in range(n - 1)))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def is_chain(self) -> bool:
        pairs = sorted((min(i, j), max(i, j)) for i, j, _ in self.edges)
        return pairs == [(i, i + 1) for i in range(self.n - 1)]

    def chain_weights(self) -> np.ndarray:
        """Per-edge weights ordered along the chain; requires :meth:`is_chain`."""
        w = np.empty(self.n - 1)
        for i, j, wij in self.edges:
            w[min(i, j)] = wij
        return w


@lru_cache(maxsize=256)
def edge_arrays(graph: GridGraph):
    """(ei, ej, w) index/weight arrays plus the incidence-norm bound 2*max degree."""
    if graph.n_edges == 0:
        return (np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp),
                np.empty(0), 2.0)
    ei = np.array([e[0] for e in graph.edges], dtype=np.intp)
    ej = np.array([e[1] for e in graph.edges], dtype=np.intp)
    w = np.array([e[2] for e in graph.edges])
    deg = np.bincount(ei, minlength=graph.n) + np.bincount(ej, minlength=graph.n)
    return ei, ej, w, 2.0 * float(deg.max())


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``u -> ||u - center||^2 / (2 scale^2)``; scale > 0."""

    center: Signal
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ParameterError(f"quadratic scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class WeightedTV:
    """Pairwise regularizer over a graph, with an optional truncated edge set.

    Edges listed in ``truncated_edges`` (indices into ``graph.edges``)
    contribute their constant weight ``w_ij``; the remaining edges contribute
    ``w_ij * f_base(u_i - u_j)`` with ``f_base`` either ``abs`` or ``square``.
    With ``truncated_edges`` empty and ``f_base="abs"`` this is the anisotropic
    total variation.
    """

    graph: GridGraph
    truncated_edges: frozenset = frozenset()
    f_base: str = "abs"

    def __post_init__(self):
        if self.f_base not in ("abs", "square"):
            raise ParameterError(f"f_base must be 'abs' or 'square', got {self.f_base!r}")
        idx = frozenset(int(k) for k in self.truncated_edges)
        if idx and (min(idx) < 0 or max(idx) >= self.graph.n_edges):
            raise ParameterError("truncated edge index out of range")
        object.__setattr__(self, "truncated_edges", idx)

    def truncation_constant(self) -> float:
        return float(sum(self.graph.edges[k][2] for k in self.truncated_edges))

    def active_arrays(self):
        """(ei, ej, w) restricted to the non-truncated edges."""
        ei, ej, w, _ = edge_arrays(self.graph)
        if not self.truncated_edges:
            return ei, ej, w
        keep = np.ones(self.graph.n_edges, dtype=bool)
        keep[list(self.truncated_edges)] = False
        return ei[keep], ej[keep], w[keep]


@dataclass(frozen=True)
class L1:
    """``u -> weight * ||u||_1``; weight >= 0.  Dimension-free."""

    weight: float = 1.0

    def __post_init__(self):
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise ParameterError(f"l1 weight must be >= 0, got {self.weight}")


@dataclass(frozen=True)
class DualTVBallIndicator:
    """Indicator of the scaled dual ball of the graph's weighted TV seminorm.

    The set is ``radius * K`` where ``K`` is the set of points whose inner
    product with any ``u`` is at most ``TV(u)``.  The value is 0 inside and
    +inf outside.  The set has empty interior in R^n (it lies in the
    zero-mean subspace for a connected graph); its interior point relative to
    the affine hull is 0, where the indicator evaluates finite.
    """

    graph: GridGraph
    radius: float = 1.0

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ParameterError(f"ball radius must be > 0, got {self.radius}")


ConvexPiece = Union[Quadratic, WeightedTV, L1, DualTVBallIndicator]


@dataclass(frozen=True)
class TimeParams:
    """Evolution times (t or t_1..t_N) and the smoothing parameter epsilon.

    ``epsilon == 0`` selects the first-order / small-noise regime.
    """

    times: tuple[float, ...]
    epsilon: float = 0.0

    def __post_init__(self):
        times = tuple(float(t) for t in np.atleast_1d(np.asarray(self.times, dtype=float)))
        for t in times:
            if not (t > 0 and math.isfinite(t)):
                raise ParameterError(f"times must be > 0, got {t}")
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ParameterError(f"epsilon must be >= 0, got {self.epsilon}")
        object.__setattr__(self, "times", times)

    @property
    def t(self) -> float:
        if len(self.times) != 1:
            raise ParameterError("single-time accessor on multi-time parameters")
        return self.times[0]


def piece_dimension(piece: ConvexPiece):
    """The dimension a piece is bound to, or None if it applies to any n."""
    if isinstance(piece, Quadratic):
        return piece.center.n
    if isinstance(piece, (WeightedTV, DualTVBallIndicator)):
        return piece.graph.n
    return None


def check_dimension(piece: ConvexPiece, u: Signal):
    d = piece_dimension(piece)
    if d is not None and d != u.n:
        raise DimensionMismatchError(
            f"{type(piece).__name__} is bound to n={d}, signal has n={u.n}"
        )


def piece_infimum(piece: ConvexPiece) -> float:
    """Infimum of the piece over R^n (known in closed form for every kind)."""
    if isinstance(piece, WeightedTV):
        return piece.truncation_constant()
    return 0.0


def evaluate_piece(piece: ConvexPiece, u: Signal) -> float:
    """Value of one convex piece at ``u``; +inf only for indicator kinds."""
    check_dimension(piece, u)
    x = u.values
    if isinstance(piece, Quadratic):
        d = x - piece.center.values
        return float(d @ d) / (2.0 * piece.scale**2)
    if isinstance(piece, L1):
        return piece.weight * float(np.abs(x).sum())
    if isinstance(piece, WeightedTV):
        ei, ej, w = piece.active_arrays()
        diff = x[ei] - x[ej]
        base = np.abs(diff) if piece.f_base == "abs" else diff * diff
        return piece.truncation_constant() + float(w @ base)
    if isinstance(piece, DualTVBallIndicator):
        from .prox import dual_ball_distance  # local import: avoids a cycle

        dist = dual_ball_distance(x / piece.radius, piece.graph)
        return 0.0 if dist <= 1e-6 * max(1.0, float(np.abs(x).max())) else INF
    raise TypeError(f"not a convex piece: {piece!r}")


def evaluate_min_regularizer(pieces: Sequence[ConvexPiece], u: Signal):
    """Pointwise minimum over pieces and the argmin index set.

    Returns ``(value, indices)`` where ``indices`` holds every piece index
    whose value lies within tie tolerance of the minimum.
    Raises :class:`OutsideDomainError` when every piece is +inf at ``u``.
    """
    if not pieces:
        raise ParameterError("need at least one piece")
    vals = [evaluate_piece(p, u) for p in pieces]
    finite = [v for v in vals if v < INF]
    if not finite:
        raise OutsideDomainError("u lies outside the domain of every piece")
    vmin = min(finite)
    tol = max(TIE_REL * abs(vmin), TIE_ABS)
    idx = tuple(i for i, v in enumerate(vals) if v - vmin <= tol)
    return vmin, idx
