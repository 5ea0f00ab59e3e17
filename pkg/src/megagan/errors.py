"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class GanError(Exception):
    exit_code = 1


class ConfigError(GanError, ValueError):
    """Invalid configuration, shape or argument."""

    exit_code = 1


class ShapeError(ConfigError):
    pass


class NumericError(GanError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""

    exit_code = 2


class ImageIOError(GanError, OSError):
    exit_code = 3


class DecodeError(ImageIOError):
    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class CheckpointError(GanError):
    exit_code = 3
    code = "checkpoint"


class BadMagicError(CheckpointError):
    code = "bad_magic"


class UnsupportedVersionError(CheckpointError):
    code = "bad_version"


class ChecksumError(CheckpointError):
    code = "bad_checksum"
