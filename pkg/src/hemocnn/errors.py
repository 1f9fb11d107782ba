"""Exception hierarchy shared by every hemocnn module."""


class HemoError(Exception):
    """Base class for all hemocnn errors."""


class ShapeError(HemoError, ValueError):
    """Tensor or layer dimensions are incompatible."""


class StateError(HemoError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class ConfigError(HemoError, ValueError):
    """A configuration value is out of its allowed range."""


class DataError(HemoError, ValueError):
    """Input data is empty, unlabeled or otherwise unusable."""


class DecodeError(DataError):
    """An image file could not be decoded."""


class FormatError(HemoError, ValueError):
    """A checkpoint file is corrupt, truncated or incompatible."""


class NumericError(HemoError, ArithmeticError):
    """A computation produced a non-finite value or was ill-posed."""
