"""Exception hierarchy shared across the package."""


class IblcastError(Exception):
    """Base class for all package errors."""


class ConfigurationError(IblcastError):
    """Invalid parameter value, unknown kind, or inconsistent run settings."""


class UsageError(IblcastError):
    """An operation was called on an object not in a usable state."""


class EmptyMemoryError(UsageError):
    """Retrieval or blending was attempted on a memory with no instances."""


class TemporalOrderError(IblcastError):
    """A timestamp violates the strictly-forward bookkeeping discipline."""


class IngestionError(IblcastError):
    """Malformed input data (CSV rows, empty trajectories, range violations)."""


class TrainingDivergenceError(IblcastError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (update step {step})")
        self.step = step
