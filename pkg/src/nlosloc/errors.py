"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when inputs violate a documented precondition."""
