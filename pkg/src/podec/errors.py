"""Exception types raised across the package."""


class PodecError(Exception):
    """Base class for all package errors."""


class InvalidPlant(PodecError, ValueError):
    pass


class NotStabilizable(PodecError):
    pass


class IllConditioned(PodecError):
    pass


class NotHurwitz(PodecError):
    pass


class DimensionMismatch(PodecError, ValueError):
    pass


class InvalidDecomposition(PodecError, ValueError):
    pass


class BudgetExceeded(PodecError):
    pass


class AllUnstable(PodecError):
    """Every candidate decomposition produced an unstable closed loop."""

    def __init__(self, message, evaluations=None):
        super().__init__(message)
        self.evaluations = evaluations or []


class Singular(PodecError):
    pass


class InfeasibleInit(PodecError):
    pass


class OptimizerStalled(PodecError):
    pass


class GramianSingular(PodecError):
    pass


class ExhaustedRetries(PodecError):
    pass


class NonEquilibriumGoal(PodecError):
    pass


class DivergedValue(PodecError):
    pass


class NonConvergence(PodecError):
    pass


class NonPositiveReference(PodecError, ValueError):
    pass


class NonFinite(PodecError):
    pass


class PhaseError(PodecError):
    """Failure inside one phase of a multi-step experiment."""

    def __init__(self, phase, cause):
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause
