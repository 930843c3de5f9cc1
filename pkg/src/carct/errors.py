"""Exception hierarchy shared across the package."""


class CarctError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(CarctError, ValueError):
    """Invalid configuration: bad values, unknown keys, impossible sizes."""


class NumericalError(CarctError, ArithmeticError):
    """A numerical routine failed to reach its accuracy contract."""


class DegenerateDesignError(CarctError):
    """The realized design matrix is singular; the trial cannot be tested.

    Callers treat the trial as "no rejection" and count it separately.
    """


class BudgetExceededError(CarctError):
    """An exact computation would exceed its configured size budget."""
