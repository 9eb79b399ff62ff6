"""Exception hierarchy shared across the toolkit."""


class AffectPipeError(Exception):
    """Base class for all toolkit errors."""


class FormatError(AffectPipeError):
    """Malformed file contents (WAV header, tensor bundle, manifest line)."""


class UnsupportedFormat(AffectPipeError):
    """File parsed but uses an encoding we do not handle (e.g. 24-bit PCM)."""


class IoError(AffectPipeError):
    """Path unreadable or unwritable."""


class InputTooShort(AffectPipeError):
    """Signal shorter than one analysis frame."""


class DomainError(AffectPipeError):
    """Argument outside the mathematical domain of the function."""


class ResolutionError(AffectPipeError):
    """Filterbank too dense for the FFT grid (some filter has empty support)."""


class SilentInput(AffectPipeError):
    """Operation undefined on an all-zero signal (e.g. SNR targeting)."""


class RangeError(AffectPipeError):
    """Numeric argument outside its allowed range."""


class ShapeError(AffectPipeError):
    """Tensor or matrix dimensions incompatible with the operation."""


class ConfigError(AffectPipeError):
    """Invalid model or stage configuration."""


class DataError(AffectPipeError):
    """Empty or unusable input data set."""


class LabelError(AffectPipeError):
    """Label outside the supported emotion classes."""


class StateError(AffectPipeError):
    """Operation called in the wrong order (e.g. backward without forward)."""


class DecodeDeadlock(AffectPipeError):
    """Every candidate token masked out at some decoding step."""


class NumericsError(AffectPipeError):
    """Non-finite values produced where finite ones are required."""


class StageError(AffectPipeError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
