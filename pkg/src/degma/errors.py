"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI reports in
its JSON error document, and an ``exit_status`` used as the process exit code.
"""

from __future__ import annotations


class DegmaError(Exception):
    code = "error"
    exit_status = 1


class ConfigurationError(DegmaError, ValueError):
    code = "configuration"
    exit_status = 3


class MissingInputError(DegmaError, FileNotFoundError):
    code = "missing-input"
    exit_status = 4


class PreconditionError(DegmaError, ValueError):
    code = "precondition"
    exit_status = 5


class UnsupportedOrderError(PreconditionError):
    code = "unsupported-order"


class DomainError(PreconditionError):
    """Quantity undefined for the given input (zero denominator, zero norm)."""

    code = "domain"


class NumericalError(DegmaError, ArithmeticError):
    code = "numerical"
    exit_status = 6


class SingularSystemError(NumericalError):
    code = "singular-system"


class ConvexityError(NumericalError):
    code = "convexity-failure"


class NegativityError(NumericalError):
    code = "negativity-failure"


class ConvergenceError(NumericalError):
    code = "non-convergence"


class CollapseError(ConvergenceError):
    """Iterates collapsed onto the trivial solution u = 0."""

    code = "collapse"


class StiffnessError(NumericalError):
    code = "stiffness"


class OracleError(NumericalError):
    code = "oracle"


class FrameError(PreconditionError):
    code = "frame"


class DeltaTooLargeError(FrameError):
    code = "delta-too-large"


class RangeError(PreconditionError):
    code = "range"


class NonConvexError(PreconditionError):
    code = "non-convex"


class SignError(NumericalError):
    code = "sign"


class WindowError(PreconditionError):
    code = "window-too-large"


class ConditioningError(NumericalError):
    code = "conditioning"


class InsufficientDataError(PreconditionError):
    code = "insufficient-data"


class DifferentiationError(NumericalError):
    code = "differentiation"
