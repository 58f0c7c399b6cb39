"""Exception types raised across the package."""


class ParameterDomainError(ValueError):
    """A distribution parameter lies outside its valid domain."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class IncompatibleComponentsError(ValueError):
    """Components of different families or dimensions were combined."""


class ConsistencyError(ValueError):
    """An assignment is infeasible with respect to the model it refers to."""
