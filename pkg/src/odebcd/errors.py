"""Exception hierarchy shared by the solver, collocation and training code."""


class OdeBcdError(Exception):
    """Base class for all package errors."""


class EvaluationError(OdeBcdError):
    """A vector field returned non-finite values."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SingularPairError(OdeBcdError, ValueError):
    """Two particles coincide, so the pair potential is singular."""


class SolverError(OdeBcdError):
    """Base class for integration failures."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DivergenceError(SolverError):
    """The step budget ran out before reaching the final sample time."""


class InstabilityError(SolverError):
    """The integrated state became non-finite."""


class SensitivityInstabilityError(InstabilityError):
    """The variational (sensitivity) part of an augmented solve blew up."""


class StiffnessError(SolverError):
    """The adaptive step size underflowed."""


class NonFiniteGradientError(OdeBcdError, ValueError):
    """An optimizer was handed a gradient containing inf or nan."""


class UndefinedMetricError(OdeBcdError, ValueError):
    """The metric is undefined for the given input (e.g. zero-norm target)."""


class ConfigError(OdeBcdError, ValueError):
    """Invalid experiment or training configuration."""
