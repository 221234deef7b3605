"""Exception types shared across the library.

The CLI maps these onto its exit-code contract (65 for domain errors,
70 for numeric non-convergence).
"""


class PointHeatError(Exception):
    """Base class for library errors."""


class DomainError(PointHeatError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class NotConvergedError(PointHeatError, ArithmeticError):
    """An adaptive routine exhausted its subdivision budget."""

    def __init__(self, message, value=None, error_estimate=None):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate


class OverflowSignal(PointHeatError, OverflowError):
    """The true result exceeds the representable floating-point range."""


class UnsupportedPartitionError(PointHeatError, ValueError):
    """Exact evaluation requested for a partition that is too fine."""


class DegenerateStartError(DomainError):
    """A Monte Carlo run was started from a state already inside the killing ball."""
