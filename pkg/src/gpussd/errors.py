"""Exception hierarchy shared by every simulator component."""


class SimError(Exception):
    """Base class for all simulator errors."""


class SchedulingInPast(SimError):
    pass


class OutOfGeometry(SimError):
    pass


class OutOfSpace(SimError):
    pass


class OutOfRange(SimError):
    """Logical address beyond the exported capacity."""


class UnalignedAccess(SimError):
    pass


class QueueFull(SimError):
    pass


class ParseError(SimError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NegativeField(ParseError):
    pass


class DegenerateSplit(SimError):
    pass


class ZeroMeanPositiveVariance(SimError):
    pass


class ZeroSpan(SimError):
    pass


class ConfigError(SimError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class UnknownGenerator(SimError):
    pass


class IoFailure(SimError, OSError):
    pass
