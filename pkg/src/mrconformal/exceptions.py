"""Exception hierarchy shared across the package."""


class MRConformalError(Exception):
    """Base class for all package errors."""


class DataError(MRConformalError, ValueError):
    """Malformed or inconsistent input data."""


class FitError(MRConformalError):
    """A working model or weighted regression could not be fitted."""


class SolverError(MRConformalError):
    """The empirical-likelihood solver found no feasible descent step."""


class ConvergenceError(SolverError):
    """The empirical-likelihood solver hit its iteration limit."""

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class CalibrationError(MRConformalError):
    """Calibration could not proceed (e.g. no complete calibration cases)."""
