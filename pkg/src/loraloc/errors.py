class LocalizationError(Exception):
    """Base class for all errors raised by loraloc."""


class ModelDomainError(LocalizationError, ValueError):
    """A propagation model was evaluated outside its valid domain."""


class InsufficientDataError(LocalizationError):
    """Not enough usable datapoints for a position fix."""


class DegenerateGeometryError(LocalizationError):
    """Receiver positions do not constrain a 2-D fix (e.g. collinear)."""


class StateMachineError(LocalizationError):
    """An illegal mission phase transition was requested."""


class MissionFailure(LocalizationError):
    """A simulated mission could not complete.

    ``diagnostics`` carries whatever context the runner had when it failed.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParseError(LocalizationError, ValueError):
    """Malformed wire message or CSV row."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class ConfigError(LocalizationError, ValueError):
    """Run configuration failed validation; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
