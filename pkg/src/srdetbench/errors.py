"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 for usage/config problems, 3 for bad input data, 4 for runtime failures.
"""


class BenchError(Exception):
    exit_code = 4


class ConfigError(BenchError, ValueError):
    exit_code = 2


class DataError(BenchError):
    exit_code = 3


# geometry / imaging
class InvalidFactor(ConfigError):
    pass


class InvalidDimensions(ConfigError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class EmptyInput(DataError, ValueError):
    pass


class MissingFile(DataError, FileNotFoundError):
    pass


class DecodeError(DataError):
    pass


class UnsupportedChannelCount(DataError):
    pass


# super-resolution
class InvalidConfig(ConfigError):
    pass


class InputTooSmall(DataError, ValueError):
    pass


class StepOutOfRange(ConfigError):
    pass


class EmptyDataset(DataError):
    pass


class PatchLargerThanImage(DataError):
    pass


class NonFiniteLoss(BenchError, FloatingPointError):
    pass


class CorruptCheckpoint(DataError):
    pass


class VersionMismatch(DataError):
    pass


class ScaleMismatch(ConfigError):
    pass


# detection
class ModelAssetMissing(ConfigError):
    pass


class BackendMisconfigured(ConfigError):
    pass


class InvalidShape(ConfigError):
    pass


class FrameMismatch(DataError):
    pass


# dataset ingestion
class MalformedLine(DataError):
    def __init__(self, lineno: int, line: str, reason: str = "", path=None):
        self.lineno = lineno
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:" if path else "line "
        msg = f"{where}{lineno}: malformed line {line!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class EmptyFile(DataError):
    pass


class UnknownRole(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class TrackWithoutRole(DataError):
    pass


class ManifestUnreadable(DataError):
    pass


# reports
class IncomparableRuns(DataError):
    pass


class SchemaVersionMismatch(DataError):
    pass


class ReportIOError(BenchError, OSError):
    pass
