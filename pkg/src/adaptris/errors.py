"""Exception hierarchy shared by the solver modules and the CLI."""


class AdaptrisError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(AdaptrisError, ValueError):
    """An argument violates a documented precondition (shape, sign, range)."""


class ModelEvaluationError(AdaptrisError, FloatingPointError):
    """An energy-model evaluation produced a non-finite value."""


class IndefiniteOperatorError(AdaptrisError, ArithmeticError):
    """A linear operator that was required to be positive definite is not."""


class SolverError(AdaptrisError, RuntimeError):
    """Base class for failures of the per-step stationarity solve."""


class MaxIterationsExceeded(SolverError):
    pass


class DescentViolated(SolverError):
    pass


class StepFloorReached(SolverError):
    """The step size was halved below the configured floor."""


class ConfigError(AdaptrisError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
