"""Exception hierarchy shared by all modules."""


class FlockError(Exception):
    """Base class for every error raised by delayflock."""


class DomainError(FlockError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigurationError(FlockError, ValueError):
    """A configuration is structurally invalid (bad field, unsupported size, ...)."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class OutOfRangeError(FlockError, IndexError):
    """A time query falls outside the stored coverage."""


class ConvergenceError(FlockError, RuntimeError):
    """An iterative numerical method failed within its budget.

    ``partial`` carries the best value reached before giving up.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class IntegrationBlowUp(FlockError, RuntimeError):
    """A non-finite state was produced during time stepping."""

    def __init__(self, message, last_valid_time):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class PositivityError(FlockError, ArithmeticError):
    """A force-field denominator collapsed below the underflow clamp."""


class UnsupportedConfigurationError(ConfigurationError):
    """Valid input that this toolkit deliberately does not handle."""


class PartialResultWarning(UserWarning):
    """Fewer results than requested could be produced."""
