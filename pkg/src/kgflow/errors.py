"""Exception hierarchy shared by every kgflow module."""


class KGFlowError(Exception):
    """Base class for all library errors."""


class ConstructionError(KGFlowError, ValueError):
    """A density, kernel or config object could not be built from its inputs."""


class DimensionError(KGFlowError, ValueError):
    """Array shapes or dimensions do not agree."""


class SingularCovarianceError(KGFlowError, ValueError):
    """A covariance (or the matrix A with Sigma = A A^T) is singular or too ill-conditioned."""


class EmptyEnsembleError(KGFlowError, ValueError):
    """An average over samples was requested with too few samples."""


class UnsupportedKernelError(KGFlowError, TypeError):
    """The kernel lacks a capability the operation needs (e.g. an analytic y-gradient)."""


class UnsupportedDimensionError(KGFlowError, ValueError):
    """The operation only supports low dimensions (plots, quadrature)."""


class NumericalError(KGFlowError, ArithmeticError):
    """Non-finite values appeared during a computation."""

    def __init__(self, message, step_index=None):
        if step_index is not None:
            message = f"step {step_index}: {message}"
        super().__init__(message)
        self.step_index = step_index


class ConfigError(KGFlowError, ValueError):
    """An experiment configuration is malformed or fails validation."""


def annotate_step(exc, step):
    """Attach a flow step index to a library error (only the innermost one wins)."""
    if getattr(exc, "step_index", None) is None:
        exc.step_index = step
        head = exc.args[0] if exc.args else ""
        exc.args = (f"step {step}: {head}",) + exc.args[1:]
    return exc
