"""Exception types shared across the package."""


class GeovoxError(Exception):
    """Base class for all errors raised by geovox."""


class ParseError(GeovoxError):
    """A mesh file is malformed or not in the declared format."""


class EmptyMesh(GeovoxError):
    """A mesh has no (non-degenerate) faces."""


class DegenerateExtent(GeovoxError):
    """A mesh bounding box has zero diameter and cannot be normalized."""


class ResolutionTooHigh(GeovoxError):
    """Requested voxel resolution exceeds the supported cap."""


class MeshOutOfBounds(GeovoxError):
    """Mesh vertices fall outside the unit cube beyond the clipping tolerance."""


class ConsistencyRequired(GeovoxError):
    """A feature requiring a watertight mesh was requested on an inconsistent one."""

    def __init__(self, kinds):
        self.kinds = tuple(kinds)
        names = ", ".join(str(k) for k in self.kinds)
        super().__init__(f"mesh is not consistent; required by feature(s): {names}")


class ManifestError(GeovoxError):
    """A dataset manifest is malformed or references unknown labels."""


class ExtractionError(GeovoxError):
    """Too many objects failed during feature-matrix construction."""


class ColumnMismatch(GeovoxError):
    """Prediction input columns do not match the columns used for training."""


class DegenerateData(GeovoxError):
    """Training data cannot support a classifier (e.g. a single class)."""


class FileFormatError(GeovoxError):
    """A geovox binary/CSV artifact is corrupt or truncated."""


class VersionMismatch(FileFormatError):
    """A geovox binary artifact was written by an incompatible version."""
