"""Exception hierarchy shared across the package."""


class CtviewError(Exception):
    """Base class for all ctview errors."""


class GeometryError(CtviewError):
    """Volumes or slices that should be co-registered are not."""


class EmptyRegionError(CtviewError):
    """A requested label/region is absent from the volume."""


class NiftiError(CtviewError):
    """Malformed or unsupported volume file."""


class ManifestError(CtviewError):
    """Case manifest missing, unparsable, or referencing bad paths."""


class CacheError(CtviewError):
    """Derived-result cache directory unusable."""


class ModelError(CtviewError):
    """Checkpoint unreadable or incompatible with this build."""


class PipelineError(CtviewError):
    """A processing stage failed; carries the stage name for reporting."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage
