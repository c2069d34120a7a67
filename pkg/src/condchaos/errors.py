"""Exception hierarchy shared by all modules."""


class CondChaosError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgument(CondChaosError, ValueError):
    pass


class ResourceError(CondChaosError, MemoryError):
    pass


class NumericError(CondChaosError, ArithmeticError):
    """Non-finite value produced during a computation.

    ``location`` carries whatever indices identify where it happened.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class UnsupportedModel(CondChaosError):
    pass


class NonConvergence(CondChaosError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class InternalError(CondChaosError, RuntimeError):
    pass


class ConfigError(CondChaosError, ValueError):
    """Configuration problem; names the offending key and line when known."""

    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line
