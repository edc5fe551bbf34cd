"""Exception types shared across the package.

Anything raised on bad user data derives from :class:`WeaktagError` so the
CLI can map it to a stable exit code. Plain ``ValueError`` is reserved for
programming errors such as shape mismatches between in-memory arrays.
"""


class WeaktagError(Exception):
    """Base class for data and numeric errors raised by this package."""


class WavFormatError(WeaktagError):
    """The file is not a readable PCM16 mono RIFF/WAVE file."""


class SampleRateMismatchError(WeaktagError):
    """The WAV sample rate differs from the rate the pipeline expects."""


class ClipTooShortError(WeaktagError):
    """The clip has too few samples or frames for the requested windowing."""


class EmptyFilterError(WeaktagError):
    """A mel filter received no FFT bins at the requested resolution."""


class CacheFormatError(WeaktagError):
    """The feature cache file is corrupt or has the wrong magic."""


class LabelParseError(WeaktagError):
    """A weak-label index file line could not be parsed."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class PlacementError(WeaktagError):
    """Synthetic events cannot be placed inside the clip bounds."""


class FoldError(WeaktagError):
    """Fold ids are missing, out of range, or leave a fold empty."""


class UndefinedEerError(WeaktagError):
    """EER is undefined because one truth class is empty."""


class NonFiniteError(WeaktagError):
    """A loss or gradient became NaN or infinite; training must stop."""


class CheckpointFormatError(WeaktagError):
    """The checkpoint file is corrupt or has an unknown version."""
