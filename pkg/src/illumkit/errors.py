"""Exception hierarchy shared across the package."""


class IllumkitError(Exception):
    """Base class for all package errors."""


class ShapeError(IllumkitError):
    """Layer input/output shapes are inconsistent with the layer spec."""


class NonFiniteError(IllumkitError):
    """A tensor picked up NaN or Inf values during computation."""


class DegenerateIlluminantError(IllumkitError):
    """Illuminant vector is (near-)zero or has a (near-)zero channel."""


class DegenerateStatisticError(IllumkitError):
    """A baseline statistic collapsed to zero (e.g. edge energy of a flat image)."""


class DataFormatError(IllumkitError):
    """An image file or manifest is malformed."""


class ConfigError(IllumkitError):
    """A run configuration is invalid (unknown key, bad value, bad schema)."""


class SamplingError(IllumkitError):
    """Patch sampling cannot proceed (image too small, all pixels masked, ...)."""


class CheckpointError(IllumkitError):
    """Checkpoint file is malformed or incompatible with the requested stage."""
