"""Exception types shared across the library."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UnsupportedOrderError(ValueError):
    """The requested Matern order is not supported by this operation."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""


class ParseError(ValueError):
    """A config, CSV or model file could not be parsed."""
