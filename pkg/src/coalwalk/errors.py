"""Exception types shared across the package."""


class InvalidChainError(ValueError):
    """Raised when a rate generator violates a structural invariant."""


class NumericalError(RuntimeError):
    """Raised when a linear solve or quadrature fails its residual target."""

    def __init__(self, message, residual=None):
        if residual is not None:
            message = f"{message} (residual={residual:.3e})"
        super().__init__(message)
        self.residual = residual


class BudgetExceededError(RuntimeError):
    """Raised when a state-count or event-count budget would be exceeded."""


class ConfigError(ValueError):
    """Raised when an experiment configuration fails schema validation."""
