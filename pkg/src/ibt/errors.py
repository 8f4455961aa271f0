"""Exception hierarchy shared across the package."""


class IbtError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IbtError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class DomainError(IbtError, ValueError):
    """An argument is outside the operation's valid domain (e.g. k > N)."""


class DataError(IbtError, ValueError):
    """Input data violates an invariant (NaN coords, bad labels, bad one-hot)."""


class ConfigError(IbtError, ValueError):
    """A configuration is internally inconsistent or a key is unknown."""


class ContractError(IbtError, RuntimeError):
    """A caller violated an API contract (non-scalar loss, missing grads)."""


class NumericError(IbtError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class ParseError(IbtError, ValueError):
    """A file failed to parse. Carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(IbtError, RuntimeError):
    """Training diverged. Carries the epoch/batch where it happened."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        if epoch is not None:
            message = f"epoch {epoch}, batch {batch}: {message}"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class CheckpointError(IbtError, ValueError):
    """A checkpoint file is corrupt or does not match the model."""
