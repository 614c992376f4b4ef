"""Exception hierarchy."""


class WPRError(Exception):
    """Base class for package errors."""


class NegativeMass(WPRError, ValueError):
    pass


class NotNormalizable(WPRError, ValueError):
    pass


class ZeroVectorCosine(WPRError, ValueError):
    pass


class DisconnectedSupport(WPRError):
    """A positive-mass row or column has no retained kernel entry."""


class NumericalBlowup(WPRError, FloatingPointError):
    pass


class NonConvergence(WPRError):
    pass


class DomainError(WPRError, ValueError):
    pass


class ConfigError(WPRError, ValueError):
    """Bad configuration; ``line`` and ``field`` locate the problem when known."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class MissingSeries(WPRError, KeyError):
    pass
