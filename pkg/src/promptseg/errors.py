"""Exception hierarchy shared by every promptseg module."""


class PromptSegError(Exception):
    """Base class for all promptseg errors."""


class DimensionError(PromptSegError):
    """Tensor shapes are incompatible for the requested operation."""


class BoundsError(PromptSegError):
    """A box, index, or region lies outside the valid range."""


class ContractError(PromptSegError):
    """A documented precondition was violated by the caller."""


class CapacityError(ContractError):
    """A generator was asked for more structure than the space can hold."""


class UnsupportedOpError(PromptSegError):
    """A recorded operation has no registered gradient rule."""


class FormatError(PromptSegError):
    """A binary or text file does not conform to its declared format."""


class ManifestError(FormatError):
    """A manifest disagrees with the tensors it describes."""


class ConfigError(PromptSegError):
    """A run configuration is missing, malformed, or self-contradictory."""


class EmptyMaskError(PromptSegError):
    """An operation that needs foreground pixels received an empty mask."""
