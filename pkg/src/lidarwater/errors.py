"""Exception types raised across the package."""


class LasFormatError(ValueError):
    """Malformed LAS header or unsupported layout."""


class UnsupportedFormatError(LasFormatError):
    """Input is a recognised but unsupported variant (e.g. LAZ)."""


class TruncatedFileError(OSError):
    """Point records end before the count announced in the header."""

    def __init__(self, message, record_index):
        super().__init__(message)
        self.record_index = record_index


class XyzParseError(ValueError):
    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyCloudError(ValueError):
    """Raised when bounds or a grid are requested from zero points."""


class AsciiGridFormatError(ValueError):
    pass


class GeorefMismatchError(ValueError):
    pass


class EmptySceneError(ValueError):
    """The occupancy mask has no occupied cell at all."""


class SceneSpecError(ValueError):
    pass
