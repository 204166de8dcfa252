"""Exception types shared across the toolkit."""


class HJOptError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(HJOptError, ValueError):
    """Signal/operator dimensions are inconsistent."""


class ParameterError(HJOptError, ValueError):
    """A numeric parameter violates its sign/range constraint."""


class OutsideDomainError(HJOptError, ValueError):
    """Every candidate function is +inf at the evaluation point."""


class UnsupportedTopologyError(HJOptError, ValueError):
    """The graph does not have the topology an algorithm requires."""


class UnsupportedModelError(HJOptError, ValueError):
    """The requested term combination has no implemented evaluation path."""


class EnumerationCapError(HJOptError, ValueError):
    """Subset enumeration refused: 2^|E| pieces would exceed the cap."""

    def __init__(self, n_edges, cap):
        self.n_edges = n_edges
        self.cap = cap
        super().__init__(
            f"refusing exponential enumeration: |E| = {n_edges} exceeds cap {cap} "
            f"(2^{n_edges} convex pieces)"
        )


class ConvergenceError(HJOptError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        if residual is not None:
            message = f"{message} (residual {residual:.3e} after {iterations} iterations)"
        super().__init__(message)


class AccuracyError(HJOptError, RuntimeError):
    """A quadrature result failed its error estimate or integrability check."""


class ConfigError(HJOptError, ValueError):
    """A configuration file failed to parse into valid model types."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
