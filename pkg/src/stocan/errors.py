"""Exception types shared across the package."""


class StocanError(Exception):
    """Base class for all package errors."""


class ValidationError(StocanError):
    """Invalid input data. ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class CapacityError(StocanError):
    """An exhaustive computation would exceed its enumeration guard."""


class PreconditionError(StocanError):
    """A documented call precondition does not hold."""


class BudgetViolationError(StocanError):
    """A policy run spent more than the budget (should be unreachable)."""

    def __init__(self, record, message="budget exceeded"):
        self.record = record
        super().__init__(message)
