"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GeometryError(DomainError):
    """Channel geometry is unphysical (e.g. transmitter inside the sphere)."""


class ConfigError(ValueError):
    """A configuration object or file is inconsistent or incomplete."""


class GridMismatchError(ValueError):
    """Two objects that must share a time grid do not."""


class NonConvergenceError(RuntimeError):
    """An adaptive numerical routine exhausted its budget before reaching tolerance."""


class TailNotConvergedError(NonConvergenceError):
    """A mode series still had non-negligible terms at its hard truncation order."""


class NotUnimodalError(RuntimeError):
    """A peak search found more than one well-separated candidate maximum."""


class WindowError(RuntimeError):
    """A peak search hit the edge of its search window."""


class EvaluationOverflowError(OverflowError):
    """A result's exponent exceeds double range even after log-space assembly."""
