"""Exception hierarchy shared by every stage of the pipeline."""


class MMISTError(Exception):
    """Base class for all package errors."""


class ConfigError(MMISTError, ValueError):
    """A configuration or domain object failed validation."""


class AllZeroWeights(ConfigError):
    pass


class PatchTooLarge(ConfigError):
    pass


class ShapeMismatch(MMISTError, ValueError):
    pass


class BackendFailure(MMISTError, RuntimeError):
    pass


class EmbedderFailure(BackendFailure):
    pass


class NonFiniteLoss(MMISTError, FloatingPointError):
    """Raised when an optimisation step produced NaN/Inf.

    The partial trace is attached as ``self.trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class InversionRunError(MMISTError):
    """One run of a boosted inversion failed; ``run_index`` and ``cause`` identify it."""

    def __init__(self, run_index, cause):
        super().__init__(f"inversion run {run_index} failed: {cause!r}")
        self.run_index = run_index
        self.cause = cause


class CacheCorruption(MMISTError):
    pass


class StaleCache(MMISTError):
    pass
