"""Exception hierarchy shared by every projunn module."""


class ProjunnError(Exception):
    """Base class for all errors raised by projunn."""


class InvalidArgumentError(ProjunnError, ValueError):
    """Bad shapes, dtypes or parameter values."""


class InvalidStateError(ProjunnError):
    """An object violates its own invariants (e.g. a non-unitary parameter)."""


class SingularMatrixError(ProjunnError, ArithmeticError):
    """The polar factor is not unique because the matrix is rank deficient."""


class StepTooLargeError(ProjunnError, ArithmeticError):
    """A direct (polar) update hit a singular perturbed matrix; shrink eta."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class NumericFailureError(ProjunnError, ArithmeticError):
    """NaN or inf appeared during a forward/backward pass."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CorruptSymmetryError(ProjunnError):
    """A real (orthogonal) convolution filter lost its Hermitian symmetry."""


class CorruptFileError(ProjunnError, ValueError):
    """A serialized parameter/filter/batch file failed validation."""


class StepFailureError(ProjunnError):
    """A training step could not be completed after all retries."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(ProjunnError, ValueError):
    """Invalid or unknown training configuration."""
