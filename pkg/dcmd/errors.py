"""Error hierarchy shared by the library and the CLI.

The CLI maps these to exit codes: ConfigError -> 1, data-side errors -> 2,
NumericError -> 3.
"""


class DcmdError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = 2


class ConfigError(DcmdError):
    exit_code = 1


class DataError(DcmdError):
    exit_code = 2


class ParseError(DataError):
    """A malformed input file. Carries the path and, for text formats, the line."""

    def __init__(self, path, message: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class ShapeError(DataError, ValueError):
    pass


class CheckpointError(DataError):
    pass


class StateError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericError(DcmdError):
    exit_code = 3


class ArgumentError(DcmdError, ValueError):
    """Out-of-range call argument (time step, stride, ...)."""

    exit_code = 1
