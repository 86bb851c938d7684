"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain where an operation is defined."""


class UnsupportedContractError(ValueError):
    """The contract shape is not covered by the requested pricer."""


class StabilityError(ArithmeticError):
    """A time-stepping scheme diverged or produced non-finite values."""

    def __init__(self, message: str, last_good_tau: float | None = None):
        super().__init__(message)
        self.last_good_tau = last_good_tau
