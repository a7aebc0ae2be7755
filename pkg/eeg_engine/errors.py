"""Exception hierarchy of the engine.

Each class carries the process exit code the command line maps it to.
"""


class EngineError(Exception):
    """Base class of all engine errors."""

    exit_code = 3


class UsageError(EngineError):
    """Bad command line or config file."""

    exit_code = 1


# Data errors (exit code 2)


class DataError(EngineError):
    exit_code = 2


class FormatError(DataError):
    """File does not follow the recording container format."""


class CorruptionError(DataError):
    """Container header is valid but the payload is damaged or truncated."""


class ElectrodeError(DataError):
    """Required electrode missing or electrode sets inconsistent."""


class TooShortError(DataError):
    """Signal or recording shorter than an operation needs."""


class EmptyInputError(DataError):
    """An operation received no data to work on."""


class LabelError(DataError):
    """Class label outside the supported range."""


class BandError(DataError):
    """Frequency band not representable at the given sample rate."""


# Compute errors (exit code 3)


class ComputeError(EngineError):
    exit_code = 3


class DimensionError(ComputeError):
    """Tensor shapes do not fit the operation."""


class NumericalError(ComputeError):
    """An operation produced NaN or infinite values."""


class UninitializedStatisticsError(ComputeError):
    """Batch norm evaluated before any training batch."""


class ConfigError(ComputeError):
    """Architecture or search configuration cannot be built."""


class TrainingDivergenceError(ComputeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        message = f"Training diverged in epoch {epoch}"
        super().__init__(f"{message}: {detail}" if detail else message)


class TrialTimeoutError(ComputeError):
    """A search trial exceeded its time budget."""


class NoIncumbentError(ComputeError):
    """Every trial of a search crashed or timed out."""
