"""Exception hierarchy shared by every segkit module."""


class SegkitError(Exception):
    """Base class for all errors raised by segkit."""


class ShapeError(SegkitError, ValueError):
    pass


class ConfigError(SegkitError, ValueError):
    pass


class DataError(SegkitError, ValueError):
    pass


class CorruptionError(SegkitError, ValueError):
    pass


class StaleTraceError(SegkitError, RuntimeError):
    """A forward trace was used after the network parameters changed."""


class NumericalError(SegkitError, ArithmeticError):
    pass


class CheckpointError(SegkitError, ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class PnmParseError(DataError):
    """Malformed PPM/PGM stream; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
