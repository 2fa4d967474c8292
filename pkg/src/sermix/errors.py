"""Exception types shared across the package.

Everything raised on bad data or bad configuration derives from
``SermixError`` so the CLI can map it to a single "data error" exit code.
"""


class SermixError(Exception):
    """Base class for all package-specific errors."""


# --- audio ---

class MalformedWav(SermixError):
    """The file is not a structurally valid RIFF/WAVE file."""


class UnsupportedEncoding(SermixError):
    """The WAV encoding is not PCM16 or IEEE float32."""


class OutOfBounds(SermixError):
    """A segment does not fit inside its parent waveform."""


# --- mixup ---

class SegmentTooShort(SermixError):
    """No valid mix length exists for the given pair of lengths."""


class SilentSegment(SermixError):
    """A segment has (near-)zero energy where positive energy is required."""


class SampleRateMismatch(SermixError):
    """Two waveforms that must share a sample rate do not."""


# --- numerical kernels / losses ---

class ShapeMismatch(SermixError):
    """Operand shapes do not conform."""


class InvalidClass(SermixError):
    """A class index is outside the configured class range."""


class DomainError(SermixError):
    """A probability input is outside the domain of the loss."""


class DegenerateBatch(SermixError):
    """The batch is too small for the requested loss."""


# --- data formats ---

class ParseError(SermixError):
    """A manifest line could not be parsed."""


class UnknownLabel(SermixError):
    """A manifest label is not in the configured class list."""


class BadMagic(SermixError):
    """A binary file does not start with the expected magic bytes."""


class VersionMismatch(SermixError):
    """A binary file declares an unsupported format version."""


class TruncatedFile(SermixError):
    """A binary file ends before its declared payload."""


class TooFewGroups(SermixError):
    """Fewer distinct groups than requested folds."""


class EmptyDataset(SermixError):
    """An operation that needs data received none."""
