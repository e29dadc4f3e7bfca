"""Exception types raised by the engine.

Every contract violation maps to a named error so callers can catch a
specific failure mode instead of parsing messages.
"""


class PauslabError(Exception):
    """Base class for all engine errors."""


# -- geometry / core types ---------------------------------------------------

class OutOfBounds(PauslabError):
    """World position falls outside the grid extent."""


class EmptySource(PauslabError):
    """Resampling source map has zero area."""


class GridMismatch(PauslabError):
    """Field array dimensions disagree with the grid."""


class GeometryMismatch(PauslabError):
    """Transducer layout does not tile onto the simulation grid."""


# -- simulation --------------------------------------------------------------

class Diverged(PauslabError):
    """Field amplitude blew up or turned non-finite during stepping."""


class InvalidCycles(PauslabError):
    """Tone burst with less than one carrier cycle."""


class NegativeAlpha(PauslabError):
    """Attenuation coefficient must be non-negative."""


# -- signal chain ------------------------------------------------------------

class TooShort(PauslabError):
    """Frame has fewer samples than the operation needs."""


class EmptyBank(PauslabError):
    """System-noise template bank holds no templates."""


class ShapeMismatch(PauslabError):
    """Array shape differs from the declared contract."""


# -- reconstruction ----------------------------------------------------------

class InvalidSoS(PauslabError):
    """Sound speed outside the physically plausible band."""


class EmptyRange(PauslabError):
    """Search interval is empty or inverted."""


class ZeroImage(PauslabError):
    """Image with no energy where a nonzero image is required."""


# -- metrics -----------------------------------------------------------------

class NoPeak(PauslabError):
    """No local maximum found near the requested seed point."""


class OpenProfile(PauslabError):
    """Profile never falls below half maximum on one side."""


class EmptyMask(PauslabError):
    """Region mask selects no pixels."""


class DegenerateClasses(PauslabError):
    """Threshold split leaves signal or background class empty."""


class EmptyRegion(PauslabError):
    """Phantom region mask selects no grid points."""


# -- dataset container -------------------------------------------------------

class BadMagic(PauslabError):
    """File does not start with the container magic."""


class UnsupportedVersion(PauslabError):
    """Container version newer than this reader."""


class ShapeError(PauslabError):
    """Tensor in the container has an invalid rank or dimension."""


class TruncatedFile(PauslabError):
    """Container ends mid-block."""


class IoError(PauslabError):
    """Underlying file system failure while reading or writing."""


class EmptyDir(PauslabError):
    """Directory holds no records."""


class MissingPair(PauslabError):
    """Prediction file without a matching dataset record (or vice versa)."""
