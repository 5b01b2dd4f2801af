"""Exception hierarchy shared by every module of the package."""


class DenoiserError(Exception):
    """Base class for all errors raised by advden."""


class ShapeError(DenoiserError, ValueError):
    """An operand has the wrong shape for the requested operation."""

    def __init__(self, op, message, expected=None, got=None):
        self.op = op
        self.expected = expected
        self.got = got
        detail = message
        if expected is not None or got is not None:
            detail += f" (expected {expected}, got {got})"
        super().__init__(f"{op}: {detail}")


class ConfigError(DenoiserError, ValueError):
    """A configuration value violates an invariant."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class DataError(DenoiserError, ValueError):
    """A data file or signal could not be used."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class CheckpointError(DenoiserError):
    """A checkpoint is unreadable or incompatible."""


class NonFiniteError(DenoiserError, FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""

    def __init__(self, where, message="non-finite value"):
        self.where = where
        super().__init__(f"{where}: {message}")
