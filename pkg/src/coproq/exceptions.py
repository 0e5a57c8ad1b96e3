class ConfigurationError(ValueError):
    """Bad shapes, sizes, or config values detected before any work runs."""


class UsageError(RuntimeError):
    """An operation was called in a state its contract forbids."""


class NumericalError(ArithmeticError):
    """Non-finite values showed up where the math guarantees finite ones."""
