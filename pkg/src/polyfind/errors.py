"""Exception types shared across the package."""


class PolyfindError(Exception):
    """Base class for all errors raised by this package."""


class EmptyCorpus(PolyfindError):
    """A corpus or training stream produced no usable data."""


class EmptyPool(PolyfindError):
    """No candidate survived the entity/kind filter."""


class EmptyScores(PolyfindError):
    """Probability computation received an empty score list."""


class EmptyQ(PolyfindError):
    """Entity shrinking received an empty score map."""


class DimensionMismatch(PolyfindError):
    """Input dimensionality disagrees with model configuration."""


class BatchTooSmall(PolyfindError):
    """A training batch had fewer than two rows."""


class NotNormalized(PolyfindError):
    """An encoding that must be unit-norm was not."""


class FormatVersionMismatch(PolyfindError):
    """A persisted file has the wrong magic bytes or format version."""


class CorruptFile(PolyfindError):
    """A persisted file failed its checksum or was truncated."""


class ParseError(PolyfindError):
    """An input file could not be parsed.

    Carries the offending location so operators can find the bad record.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NotBuilt(PolyfindError):
    """The approximate search structure has not been built yet."""


class UnknownCity(PolyfindError):
    """No index is configured for the requested city."""


class InsufficientData(PolyfindError):
    """Too few examples to train a classifier."""


class NoSelectedEntity(PolyfindError):
    """Booking requires exactly one remaining restaurant."""


class ProviderError(PolyfindError):
    """A translation provider call failed.

    ``candidate_id`` identifies the pool entry being translated when the
    failure happened during an offline pool build; it is None for
    per-turn context translation failures.
    """

    def __init__(self, message, candidate_id=None):
        super().__init__(message)
        self.candidate_id = candidate_id


class SessionBusy(PolyfindError):
    """A second turn arrived while one was already running."""
