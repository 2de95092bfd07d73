"""Error types raised across the package.

Contract violations derive from ValueError, numeric failures from
ArithmeticError, and state-machine misuse from RuntimeError, so callers can
catch broad categories without importing every name.
"""


class ShapeMismatch(ValueError):
    """Operand shapes do not conform to the primitive's shape rule."""


class UnknownPrimitive(ValueError):
    """Primitive name outside the supported set."""


class NonScalarRoot(ValueError):
    """backward() called on a node whose value is not a scalar."""


class DoubleBackward(RuntimeError):
    """backward() called twice on the same root without a reset."""


class NonFiniteLoss(ArithmeticError):
    """A loss evaluation produced NaN or Inf."""


class NonFiniteGradient(ArithmeticError):
    """A parameter gradient contains NaN or Inf at step time."""


class EmptyTracklet(ValueError):
    """Tracklet with zero frames where at least one is required."""


class DimensionMismatch(ValueError):
    """Feature dimensions disagree (frames vs. model, or across records)."""


class InvalidConfig(ValueError):
    """Generator configuration violates its documented ranges."""


class MissingIdentity(ValueError):
    """Split protocol needs an identity that is absent or unlabeled."""


class ParseError(ValueError):
    """Corpus file could not be parsed; message carries the line number."""


class TooShort(ValueError):
    """Tracklet has fewer than two frames, so it cannot be partitioned."""


class DegeneratePartition(ValueError):
    """Mini-tracklet partition yields fewer than two chunks."""


class InsufficientBatch(ValueError):
    """Fewer negative candidates than the rank parameter requires."""


class LabelOutOfRange(ValueError):
    """Class label outside [0, number of classes)."""


class UninitializedBank(RuntimeError):
    """Memory bank used before its slots were initialized."""


class EmptyLabeledSet(ValueError):
    """Pseudo-label assignment needs at least one labeled tracklet."""


class EmptyGalleryAfterFilter(ValueError):
    """Cross-camera filtering removed every gallery entry."""


class NoProbes(ValueError):
    """Metric requested over an empty ranking list."""


class ProbeWithoutMatch(ValueError):
    """A probe has no correct gallery match after filtering."""


class MissingGroundTruth(ValueError):
    """Ground-truth identities required but absent."""


class ConfigError(ValueError):
    """Experiment config invalid; message carries the offending key path."""
