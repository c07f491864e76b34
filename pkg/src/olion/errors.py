"""Exception types raised across the package."""


class OlionError(Exception):
    """Base class for all package errors."""


class ZeroMatrix(OlionError, ValueError):
    pass


class NonFiniteMatrix(OlionError, ValueError):
    pass


class ShapeMismatch(OlionError, ValueError):
    pass


class InvalidRank(OlionError, ValueError):
    pass


class InvalidDim(OlionError, ValueError):
    pass


class InsufficientGrid(OlionError, ValueError):
    pass


class OutOfRange(OlionError, ValueError):
    pass


class UnknownBlock(OlionError, KeyError):
    pass


class ConfigInvalid(OlionError, ValueError):
    pass


class VersionMismatch(OlionError):
    pass


class CorruptCheckpoint(OlionError):
    pass


class NonFiniteLoss(OlionError, FloatingPointError):
    """Loss became NaN/Inf; ``step`` is the offending step index."""

    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
