"""Exception types shared across the engine."""


class BpmError(Exception):
    """Base class for all engine errors."""


class DimensionMismatch(BpmError):
    """Two rasters that must share dimensions do not."""


class EmptyCrop(BpmError):
    """A crop box degenerated to zero area after clamping."""


class EmptyInstruction(BpmError):
    """An instruction string was empty or whitespace."""


class Unparseable(BpmError):
    """The template grammar cannot parse the instruction; an LLM provider is required."""


class SchemaViolation(BpmError):
    """A provider response or config value violates the expected schema."""

    def __init__(self, field: str, message: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


class FixtureMiss(BpmError):
    """The fixture store has no entry for the requested key."""


class ProviderUnavailable(BpmError):
    """The perception provider could not be reached."""


class LocalizationFailure(BpmError):
    """Neither editing region could be established for a sample."""


class DegenerateMask(BpmError):
    """A mask required to be non-empty has zero area."""


class EmptyBatch(BpmError):
    """A batch operation received no samples."""


class AlphaOutOfRange(BpmError):
    """The semantic/region balance factor is outside [0, 1]."""


class IdSetMismatch(BpmError):
    """Sample-id sets of paired score streams differ."""


class NoComparablePairs(BpmError):
    """Every human pair was a tie; no alignment ratio can be formed."""


class DegenerateVariance(BpmError):
    """A correlation input has zero variance or fewer than two points."""


class EmptyInput(BpmError):
    """An aggregation received an empty input list."""


class MissingDistractor(BpmError):
    """Not enough distractor images to build the requested triplets."""


class ShapeMismatch(BpmError):
    """Noise fields or masks in one composition call have different shapes."""
