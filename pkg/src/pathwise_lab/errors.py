"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class ContractViolation(RuntimeError):
    """A user-supplied functional broke its calling contract."""


class PredictabilityError(ContractViolation):
    """A path functional looked at the trajectory beyond the current time."""


class ExtrapolationError(ContractViolation):
    """A value surface was queried outside its solved domain."""
