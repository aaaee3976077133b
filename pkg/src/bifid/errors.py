"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """Raised when arguments or config files violate a structural contract."""


class DomainError(ValueError):
    """Raised when a physical quantity lies outside its admissible domain."""


class NormalizationError(ValueError):
    """Raised when a normalized metric is undefined (zero denominator)."""


class IllConditionedKernelError(RuntimeError):
    """Raised when a covariance matrix cannot be factorized even with jitter."""

    def __init__(self, final_jitter: float, detail: str = ""):
        self.final_jitter = final_jitter
        msg = f"covariance factorization failed; final jitter tried: {final_jitter:.6e}"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class OptimizationError(RuntimeError):
    """Raised when every hyperparameter search start fails."""
