"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(ToolkitError):
    """Grid is empty or paired maps disagree on width/height."""


class ClassRangeError(ToolkitError):
    """A class ID falls outside the configured class count."""


class RemapDomainError(ToolkitError):
    """A label map contains a class the remap table does not cover."""


class InstanceOverflowError(ToolkitError):
    """More instances than a 16-bit instance grid can hold."""


class BoxError(ToolkitError):
    """Invalid box geometry, score, or a box outside the usable area."""


class CapacityError(ToolkitError):
    """Synthetic placement could not fit the requested instances."""


class ConfigError(ToolkitError):
    """Malformed or unknown key in a key=value config file."""


class DatasetError(ToolkitError):
    """Dataset root missing or no usable samples."""


class AccumulatorMismatchError(ToolkitError):
    """Accumulators with different class configurations cannot merge."""


class FileFormatError(ToolkitError):
    """Base for raster and detection file format problems."""


class BitDepthError(FileFormatError):
    """Raster file has the wrong bit depth for the requested map type."""


class ChannelCountError(FileFormatError):
    """Raster file is not single-channel."""


class TruncatedFileError(FileFormatError):
    """Raster file ends before the full pixel grid (or is unreadable)."""


class DetectionParseError(FileFormatError):
    """A detections file line failed to parse."""

    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no
