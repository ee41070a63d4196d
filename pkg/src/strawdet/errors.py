"""Exception hierarchy shared across the package."""


class StrawdetError(Exception):
    """Base class for all errors raised by strawdet."""


class ShapeError(StrawdetError, ValueError):
    """A tensor or parameter has the wrong shape.

    ``dim`` names the offending dimension (e.g. ``"channels"``).
    """

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class GraphError(StrawdetError, ValueError):
    """Malformed layer graph (bad wiring, unknown architecture, channel mismatch)."""


class WeightError(StrawdetError):
    """Missing or mis-shaped weight slot. ``slot`` is the qualified tensor name."""

    def __init__(self, message, slot=None):
        super().__init__(message)
        self.slot = slot


class WeightFileError(StrawdetError):
    """Unreadable weight file."""


class BadMagicError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass


class DuplicateTensorError(WeightFileError):
    pass


class ImageFormatError(StrawdetError):
    """Unreadable raster file."""


class ImageMagicError(ImageFormatError):
    pass


class ImageTruncatedError(ImageFormatError):
    pass


class UnsupportedMaxvalError(ImageFormatError):
    pass


class LabelFormatError(StrawdetError, ValueError):
    """Malformed label line. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
