"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class BudgetError(RuntimeError):
    """An experiment cell would exceed the configured scalar-draw budget."""
