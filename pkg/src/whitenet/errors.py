"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not conform (message names both shapes)."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class StateError(RuntimeError):
    """An operation was called with stale or missing internal state."""


class ConfigError(ValueError):
    """A configuration value or name does not resolve."""


class CsvParseError(ValueError):
    """A CSV file violates the trajectory format contract."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss_name="loss"):
        super().__init__(f"{loss_name} diverged (non-finite) at epoch {epoch}")
        self.epoch = epoch
