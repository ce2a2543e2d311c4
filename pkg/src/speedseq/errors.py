"""Exception hierarchy. CLI exit codes hang off these classes."""


class SpeedSeqError(Exception):
    exit_code = 1


class ConfigError(SpeedSeqError, ValueError):
    exit_code = 2


class DataError(SpeedSeqError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvariantError(DataError):
    def __init__(self, message, track_id=None, field=None):
        self.track_id = track_id
        self.field = field
        prefix = []
        if track_id is not None:
            prefix.append(f"track {track_id!r}")
        if field is not None:
            prefix.append(f"field {field!r}")
        if prefix:
            message = ", ".join(prefix) + ": " + message
        super().__init__(message)


class TooShortError(DataError):
    def __init__(self, message, track_ids=()):
        self.track_ids = list(track_ids)
        super().__init__(message)


class FrameGapError(DataError):
    pass


class UnlabeledError(DataError):
    pass


class ShapeError(SpeedSeqError, ValueError):
    pass


class NumericError(SpeedSeqError, ArithmeticError):
    exit_code = 4


class StaleCacheError(SpeedSeqError, RuntimeError):
    pass


class CheckpointError(SpeedSeqError):
    exit_code = 3


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class GeometryError(SpeedSeqError, ValueError):
    exit_code = 3
