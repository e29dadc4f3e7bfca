"""Error taxonomy of the estimator package."""


class SosnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeIncompatible(SosnetError):
    """Architecture configuration whose stage shapes cannot line up."""


class ShapeError(SosnetError):
    """Input tensor shape does not match the model contract."""


class DatasetError(SosnetError):
    """Dataset directory, manifest, or record file is unusable."""


class WeightMismatch(SosnetError):
    """Stored weights do not fit the requested architecture."""
