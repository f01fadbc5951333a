"""Exception hierarchy shared across the package."""


class IntersynError(Exception):
    """Base class for all package errors."""


class ZeroNorm(IntersynError):
    """Quaternion norm too small to invert or normalize."""


class NonUnit(IntersynError):
    """Quaternion expected to be unit length but is not."""


class ShapeMismatch(IntersynError):
    """Array shapes incompatible with the operation."""


class WrongJointCount(IntersynError):
    """Joint-space data does not match the expected skeleton."""


class WrongWidth(IntersynError):
    """Feature-space data does not have the canonical channel width."""


class TopologyMismatch(IntersynError):
    """Two skeletons do not share the same parent array."""


class DegenerateBone(IntersynError):
    """A bone length is too small to define a direction."""


class ScheduleError(IntersynError):
    """A segment schedule violates the start-frame constraint."""


class ScheduleOverflow(IntersynError):
    """Source sequences are too short for the requested schedule."""


class SkeletonMismatch(IntersynError):
    """Sequences entering composition disagree on skeleton or fps."""


class PatternTooLong(IntersynError):
    """Per-segment frame share fell below the usable minimum."""


class BadSteps(IntersynError):
    """Invalid diffusion step count."""


class BadStep(IntersynError):
    """Step index outside the valid range for the operation."""


class NonFinite(IntersynError):
    """A forward pass or gradient produced non-finite values."""


class AllMasked(IntersynError):
    """No frame survived masking; the loss is undefined."""


class DecodeFailure(IntersynError):
    """Feature data could not be decoded to joint space."""


class TooFewSamples(IntersynError):
    """Not enough samples for a stable covariance estimate."""


class DivergenceDetected(IntersynError):
    """Training loss became non-finite."""


class ConfigError(IntersynError):
    """Run configuration failed schema or constraint validation."""


class FormatError(IntersynError):
    """A serialized file is malformed or has an unknown version."""
