"""Exception and warning types raised by ssmlab."""


class SsmError(Exception):
    """Base class for all ssmlab errors."""


class DimensionError(SsmError, ValueError):
    """Array shapes of a layer, model or input do not chain."""


class KernelLengthError(DimensionError):
    """A sampled convolution kernel is shorter than the sequence."""


class NumericalOverflowError(SsmError, ArithmeticError):
    """A recurrence produced a non-finite value.

    ``step`` is the zero-based index of the first offending time step.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class EngineCompatibilityError(SsmError, ValueError):
    """The requested execution engine cannot evaluate the given layers."""


class DiscretizationError(SsmError, ArithmeticError):
    """The matrix exponential or Tustin solve failed."""


class EigenSolverError(SsmError, ArithmeticError):
    """Eigenvalue computation failed."""


class NotDiagonalizableError(SsmError, ValueError):
    """A transition matrix is too close to defective for a spectral formula."""


class ConfigError(SsmError, ValueError):
    """Invalid configuration, spec file or precondition."""


class IllConditionedWarning(UserWarning):
    """A linear system was solved with a very large condition number."""
