"""Exception types shared across the package."""


class PcselectError(Exception):
    """Base class for all package-specific errors."""


class MatrixFormatError(PcselectError):
    """Raised for malformed or unsupported Matrix Market input."""


class AssemblyError(PcselectError):
    """Raised when COO entries cannot be assembled into a valid CSR matrix."""


class FetchError(PcselectError):
    """Raised when a matrix cannot be downloaded or extracted."""


class PreconditionerSetupError(PcselectError):
    """Raised when preconditioner setup fails (e.g. zero or negative pivot)."""

    def __init__(self, msg, kind=None, row=None):
        super().__init__(msg)
        self.kind = kind
        self.row = row


class PreconditionerUnavailableError(PcselectError):
    """Raised for registered preconditioner kinds without an implementation."""


class CondestUnavailableError(PcselectError):
    """Raised when the condition-number estimate cannot be computed
    because an inner solve did not converge."""


class UndefinedMeasureError(PcselectError):
    """Raised when a relative residual/error is requested with a zero
    reference vector."""


class NoFeasiblePreconditionerError(PcselectError):
    """Raised when no (matrix, preconditioner) pair is feasible, so the
    matrix cannot be labeled."""


class TrainingDivergedError(PcselectError):
    """Raised when neural-network training produces a non-finite loss."""


class EmptyPredictionError(PcselectError):
    """Raised when a metric is evaluated on an empty prediction set."""
