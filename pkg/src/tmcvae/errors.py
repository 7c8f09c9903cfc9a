"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Input values fall outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class MissingViewError(KeyError):
    """A fusion subset references a view that was not provided."""


class ChannelError(KeyError):
    """A required EEG channel is absent from a recording."""


class FilterDesignError(ValueError):
    """A filter design request is infeasible or produced an unstable filter."""


class CheckpointError(ValueError):
    """A checkpoint does not match the model architecture it is loaded into."""


class ConfigError(ValueError):
    """A run configuration file is malformed.

    Carries the offending key so the CLI can name it on exit.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NanLossError(RuntimeError):
    """Training hit a non-finite loss; carries the epoch/batch it happened in."""

    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
