"""Exception types raised by the public API.

Every error carries a category usable as a machine-readable tag (the class
name); the CLI prints ``Category: message`` on stderr and exits nonzero.
"""


class ConvRbigError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(ConvRbigError):
    """Input dimensions are incompatible with the operation."""


class TooLarge(ConvRbigError):
    """Dense materialization guard exceeded."""


class DegenerateMarginal(ConvRbigError):
    """A channel is constant; no monotone CDF can be fitted."""


class InsufficientData(ConvRbigError):
    """Too few samples per channel to fit a marginal map."""


class DegenerateSamples(ConvRbigError):
    """Sample vector is constant or too small for entropy estimation."""


class Diverged(ConvRbigError):
    """Training loss or weights became non-finite."""


class NotSupported(ConvRbigError):
    """Requested variant is outside the supported surface."""


class ArchMismatch(ConvRbigError):
    """Architecture does not tile the given input shape."""


class CorruptModel(ConvRbigError):
    """Model container failed validation (magic, length or shapes)."""


class EmptyBand(ConvRbigError):
    """Channel selector matched no channels."""


class BadRecordSize(ConvRbigError):
    """Dataset file length is not a whole number of records."""


class UnsupportedFormat(ConvRbigError):
    """Image file is not binary PPM with maxval 255."""


class CorruptHeader(ConvRbigError):
    """Image header could not be parsed."""


class PatchTooLarge(ConvRbigError):
    """Requested patch size exceeds the image dimensions."""


class ConfigError(ConvRbigError):
    """Run configuration contains unknown keys or out-of-range values."""
