"""Exception types shared across the package."""


class PidtError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PidtError, ValueError):
    """Invalid or inconsistent configuration."""


class UsageError(PidtError, RuntimeError):
    """An API was called in a state that does not allow it."""


class ContractViolation(PidtError, ValueError):
    """A precondition on an argument was not met."""


class ShapeError(PidtError, ValueError):
    """Array or parameter shapes do not agree."""


class ScenarioParseError(PidtError, ValueError):
    """A serialized scenario could not be parsed."""


class VersionError(PidtError, ValueError):
    """A file carries a version tag this build does not understand."""


class IntegrityError(PidtError, ValueError):
    """A checkpoint manifest does not match its payload."""


class IntegrationError(PidtError, FloatingPointError):
    """A numerical integration produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CsvParseError(PidtError, ValueError):
    """A CSV input is malformed; the message names the line and column."""
