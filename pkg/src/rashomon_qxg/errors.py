"""Exception hierarchy shared across the toolkit."""


class QxgError(Exception):
    """Base class for all toolkit errors."""


class InputError(QxgError, ValueError):
    """An argument violates an operation's precondition."""


class ParseError(QxgError, ValueError):
    """A scene or config file could not be decoded."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class ConfigError(QxgError, ValueError):
    """A configuration is infeasible or malformed."""


class TrainingError(QxgError, RuntimeError):
    """Model training could not proceed."""


class NoCandidatesError(QxgError, ValueError):
    """The acting object has no co-appearing objects to choose from."""


class ContractError(QxgError, RuntimeError):
    """An internal contract was broken, e.g. a stale forward cache."""


class StageError(QxgError, RuntimeError):
    """A pipeline stage failed."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
