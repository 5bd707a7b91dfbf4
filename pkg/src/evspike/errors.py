"""Exception hierarchy."""


class EvSpikeError(Exception):
    """Base class for all package errors."""


class ConfigError(EvSpikeError, ValueError):
    """A configuration value violates an invariant."""


class DataError(EvSpikeError, ValueError):
    """Input data is malformed (non-finite samples, unsorted times, ...)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class RangeError(DataError):
    """A value lies outside the permitted range."""


class FormatError(EvSpikeError, ValueError):
    """A persisted file is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncationError(FormatError):
    """A persisted file ends before its declared payload."""


class DatasetError(EvSpikeError):
    """Frame extraction produced an unusable training set."""


class TrainingError(EvSpikeError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
