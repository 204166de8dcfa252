"""Min-plus combination of per-piece Lax-Oleinik solutions.

The evolution semigroup is linear over the (min, +) semiring, so an initial
datum that is a pointwise minimum of convex pieces is solved by evaluating
each piece independently and taking the pointwise minimum.  Per-piece solves
are embarrassingly parallel; the reduction always runs in index order so
reported values do not depend on scheduling.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import (
    ConvexPiece,
    GridGraph,
    Signal,
    TimeParams,
    WeightedTV,
    tied_indices,
)
from .errors import EnumerationCapError, HJOptError, ParameterError
from .hj import HJEvaluation, lax_oleinik, multi_time_lax_oleinik

ENUMERATION_CAP = 20

THREADS_ENV = "HJ_MINPLUS_THREADS"


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return min(os.cpu_count() or 1, 8)


def parallel_map(fn, items, threads: Optional[int] = None):
    """Map preserving item order; uses a thread pool when it can pay off."""
    items = list(items)
    threads = default_threads() if threads is None else max(1, threads)
    if threads == 1 or len(items) < 4:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class MinPlusSolution:
    """Pointwise minimum over per-piece solutions with its active index set.

    ``active_set`` holds every piece index whose value ties the minimum
    (shared tie tolerance), ``minimizers`` one minimizer per active index,
    and ``per_piece`` the full per-piece evaluations.  ``labels`` optionally
    names the pieces (edge subsets for truncated enumeration).
    """

    value: float
    active_set: tuple[int, ...]
    minimizers: tuple[Signal, ...]
    per_piece: tuple[HJEvaluation, ...]
    labels: Optional[tuple] = None

    @property
    def active_labels(self):
        if self.labels is None:
            return self.active_set
        return tuple(self.labels[i] for i in self.active_set)


def _reduce(per_piece: Sequence[HJEvaluation], labels=None) -> MinPlusSolution:
    value, active = tied_indices([ev.value for ev in per_piece])
    minimizers = tuple(per_piece[i].minimizer for i in active)
    return MinPlusSolution(value, active, minimizers, tuple(per_piece), labels)


def _annotate(i, exc):
    exc.args = (f"piece {i}: {exc.args[0]}" if exc.args else f"piece {i}",) + exc.args[1:]
    return exc


def minplus_solve(pieces: Sequence[ConvexPiece], x: Signal, t: float,
                  threads: Optional[int] = None) -> MinPlusSolution:
    """Solve with initial data ``min_i J_i`` by per-piece Lax-Oleinik evaluation."""
    if not pieces:
        raise ParameterError("need at least one piece")

    def solve_one(item):
        i, piece = item
        try:
            return lax_oleinik(piece, x, t)
        except HJOptError as exc:
            raise _annotate(i, exc)

    evaluations = parallel_map(solve_one, enumerate(pieces), threads)
    return _reduce(evaluations)


def truncated_tv_subsets(graph: GridGraph):
    """All edge subsets in deterministic (bitmask) order."""
    m = graph.n_edges
    return [frozenset(k for k in range(m) if mask >> k & 1)
            for mask in range(1 << m)]


def truncated_tv_enumerate(graph: GridGraph, f_base: str, x: Signal, t: float,
                           cap: int = ENUMERATION_CAP,
                           threads: Optional[int] = None) -> MinPlusSolution:
    """Exact solve of a truncated pairwise regularizer by subset enumeration.

    The truncated term ``sum_e w_e min(f(u_i - u_j), 1)`` is the minimum over
    edge subsets of convex pieces, one per subset; all ``2^|E|`` pieces are
    evaluated.  Exponential enumeration beyond ``cap`` edges is refused
    outright rather than sampled.
    """
    if graph.n_edges > cap:
        raise EnumerationCapError(graph.n_edges, cap)
    subsets = truncated_tv_subsets(graph)
    pieces = [WeightedTV(graph, s, f_base) for s in subsets]

    def solve_one(item):
        i, piece = item
        try:
            return lax_oleinik(piece, x, t)
        except HJOptError as exc:
            raise _annotate(i, exc)

    evaluations = parallel_map(solve_one, enumerate(pieces), threads)
    return _reduce(evaluations, labels=tuple(subsets))


def minplus_multi_time(pieces: Sequence[ConvexPiece], hamiltonians, x: Signal,
                       times: TimeParams,
                       threads: Optional[int] = None) -> MinPlusSolution:
    """Min-plus combination of per-piece multi-time evaluations."""
    if not pieces:
        raise ParameterError("need at least one piece")

    def solve_one(item):
        i, piece = item
        try:
            return multi_time_lax_oleinik(piece, hamiltonians, x, times)
        except HJOptError as exc:
            raise _annotate(i, exc)

    evaluations = parallel_map(solve_one, enumerate(pieces), threads)
    return _reduce(evaluations)
