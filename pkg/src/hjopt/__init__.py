"""Numerical toolkit built on representation formulas for evolution equations.

Variational denoising and decomposition models are evaluated through Moreau
envelopes and proximal points; non-convex regularizers expressed as minima of
convex pieces are handled by min-plus combination of per-piece solutions; and
Bayesian posterior means for log-concave and mixture priors come from the
smoothed (viscous) analogue of the same machinery.
"""

from .core import (
    ConvexPiece,
    DualTVBallIndicator,
    GridGraph,
    L1,
    Quadratic,
    Signal,
    TimeParams,
    WeightedTV,
    as_signal,
    evaluate_min_regularizer,
    evaluate_piece,
)
from .decompose import (
    DecompositionResult,
    decompose,
    dual_ball_membership,
    solve_s1,
    solve_s2,
)
from .errors import (
    AccuracyError,
    ConfigError,
    ConvergenceError,
    DimensionMismatchError,
    EnumerationCapError,
    HJOptError,
    OutsideDomainError,
    ParameterError,
    UnsupportedModelError,
    UnsupportedTopologyError,
)
from .hj import (
    DualTVBallConjugate,
    HJEvaluation,
    L1Conjugate,
    QuadraticConjugate,
    lax_oleinik,
    multi_time_lax_oleinik,
    multi_time_objective,
)
from .minplus import (
    MinPlusSolution,
    minplus_multi_time,
    minplus_solve,
    truncated_tv_enumerate,
)
from .prox import (
    ProxResult,
    moreau_envelope,
    prox,
    tv_prox_1d_exact,
    tv_prox_1d_exact_graph,
)
from .viscous import (
    LimitReport,
    MixturePrior,
    PosteriorStats,
    epsilon_limit_check,
    mixture_s_epsilon,
    mmse,
    posterior_mean,
    posterior_stats_1d,
    posterior_variance,
    s_epsilon,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyError", "ConfigError", "ConvergenceError", "ConvexPiece",
    "DecompositionResult", "DimensionMismatchError", "DualTVBallConjugate",
    "DualTVBallIndicator", "EnumerationCapError", "GridGraph", "HJEvaluation",
    "HJOptError", "L1", "L1Conjugate", "LimitReport", "MinPlusSolution",
    "MixturePrior", "OutsideDomainError", "ParameterError", "PosteriorStats",
    "ProxResult", "Quadratic", "QuadraticConjugate", "Signal", "TimeParams",
    "UnsupportedModelError", "UnsupportedTopologyError", "WeightedTV",
    "as_signal", "decompose", "dual_ball_membership", "epsilon_limit_check",
    "evaluate_min_regularizer", "evaluate_piece", "lax_oleinik",
    "minplus_multi_time", "minplus_solve", "mixture_s_epsilon", "mmse",
    "moreau_envelope", "multi_time_lax_oleinik", "multi_time_objective",
    "posterior_mean", "posterior_stats_1d", "posterior_variance", "prox",
    "s_epsilon", "solve_s1", "solve_s2", "truncated_tv_enumerate",
    "tv_prox_1d_exact", "tv_prox_1d_exact_graph",
]
