"""Exception types raised across lesionkit."""


class LesionKitError(Exception):
    """Base class for all package errors."""


class ShapeError(LesionKitError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(LesionKitError, ValueError):
    """A layer, network or run was configured with unusable values."""


class NonFiniteError(LesionKitError, FloatingPointError):
    """A tensor or loss contains NaN or Inf."""


class FormatError(LesionKitError, ValueError):
    """A file on disk does not follow its declared format."""


class UndefinedMetricError(LesionKitError, ValueError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""
