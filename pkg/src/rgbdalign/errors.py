"""Exception hierarchy shared across the package."""


class AlignmentError(Exception):
    """Base class for all rgbdalign errors."""


class NonPositiveDepthError(AlignmentError):
    """3D point lies at or behind the camera plane."""


class InvalidDepthError(AlignmentError):
    """Depth value is non-positive or non-finite."""


class TooSmallError(AlignmentError):
    """Grid too small for the requested operation."""


class SizeMismatchError(AlignmentError):
    """Input rasters or intrinsics do not agree in size."""


class ExternalFormatError(AlignmentError):
    """Feature tensor file is malformed."""


class NonPositiveUncertaintyError(AlignmentError):
    """Uncertainty map contains values <= 0."""


class NoValidPixelsError(AlignmentError):
    """No pixel survived the validity masks; system cannot be built."""


class SingularSystemError(AlignmentError):
    """Normal equations could not be solved even with damping."""


class MissingExternalPoseError(AlignmentError):
    """External initializer selected but no pose supplied."""


class MissingFileError(AlignmentError):
    """Required dataset file is absent."""


class ParseError(AlignmentError):
    """A dataset text file could not be parsed."""

    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class EmptyAssociationError(AlignmentError):
    """Timestamp association produced no frame pairs."""


class OutOfFrustumError(AlignmentError):
    """Requested camera motion pushes the scene out of view."""


class EmptyPointSetError(AlignmentError):
    """Metric requested over an empty point set."""
