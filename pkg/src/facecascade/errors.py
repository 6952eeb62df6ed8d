"""Exception types raised across the package."""


class FaceCascadeError(Exception):
    """Base class for all package errors."""


class DimensionError(FaceCascadeError, ValueError):
    """Inputs disagree in vertex count, landmark count or matrix shape."""


class SingularFitError(FaceCascadeError, ValueError):
    """The 3D-to-2D mapping fit is rank deficient."""

    def __init__(self, rank, message=None):
        self.rank = rank
        super().__init__(message or f"singular mapping fit: design matrix has rank {rank} < 4")


class InvalidMappingError(FaceCascadeError, ValueError):
    """A mapping matrix has a zero rotation row."""


class SingularGramError(FaceCascadeError, ValueError):
    """The shape-regressor Gram matrix cannot be inverted without regularization."""

    def __init__(self, message, stage=None):
        self.stage = stage
        if stage is not None:
            message = f"stage {stage}: {message}"
        super().__init__(message)


class DegenerateGeometryError(FaceCascadeError, ValueError):
    """Point sets too degenerate for registration or bounding boxes with no area."""


class ModelFormatError(FaceCascadeError, ValueError):
    """A model file is corrupt, truncated or of a foreign version."""


class FormatError(FaceCascadeError, ValueError):
    """A data file (mesh, landmarks, image, CSV, manifest) failed to parse."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
