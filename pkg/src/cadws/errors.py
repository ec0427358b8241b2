"""Exception hierarchy shared by all cadws modules."""


class CadwsError(Exception):
    """Base class for every error raised by this package."""


class CycleDetected(CadwsError, ValueError):
    pass


class DanglingEdge(CadwsError, ValueError):
    pass


class UnsupportedCount(CadwsError, ValueError):
    pass


class InfeasibleSpan(CadwsError, ValueError):
    pass


class ParseError(CadwsError, ValueError):
    """Malformed DAG or config file.

    ``line`` and ``field`` carry whatever location context was available.
    """

    def __init__(self, message, *, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NoReadyTask(CadwsError, RuntimeError):
    pass


class InvalidAction(CadwsError, IndexError):
    pass


class DimensionMismatch(CadwsError, ValueError):
    pass


class LengthMismatch(CadwsError, ValueError):
    pass


class CheckpointMismatch(CadwsError, ValueError):
    pass


class TrainingAborted(CadwsError, RuntimeError):
    pass
