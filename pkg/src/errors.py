class PatchloomError(Exception):
    """Base class for every error raised by the engine.

    ``exit_code`` is what the command-line front end returns when the error
    escapes a command.
    """

    exit_code = 3


class UsageError(PatchloomError):
    """The caller asked for something the configuration cannot do."""

    exit_code = 1


class DataError(PatchloomError):
    exit_code = 2


class RangeError(DataError, IndexError):
    pass


class GeometryError(DataError):
    pass


class ConfigError(DataError):
    pass


class FormatError(DataError):
    """Malformed NWIT, PPM or checkpoint bytes."""


class InvariantError(PatchloomError):
    exit_code = 3


class SequencingError(InvariantError):
    pass


class PoolStateError(InvariantError):
    pass


class MissingOffsetError(InvariantError, KeyError):
    pass


class EvictionError(InvariantError):
    """A patch needed as context was already evicted from the pool."""


class DegenerateRowError(InvariantError):
    pass


class ShapeError(InvariantError):
    pass
