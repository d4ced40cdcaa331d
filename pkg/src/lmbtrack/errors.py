"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An operation was called with inputs that break its preconditions."""


class NumericalError(ArithmeticError):
    """A numerical operation failed (singular matrix, failed square root, ...)."""


class DataIntegrityError(ValueError):
    """Stored filter state is inconsistent (e.g. a recorded measurement index
    that does not exist in the scan it points to)."""


class EmptyTrajectoryError(ContractViolationError):
    """A label was never present in any time step of the requested window."""


class ConfigError(ValueError):
    """A configuration file or override failed strict validation."""
