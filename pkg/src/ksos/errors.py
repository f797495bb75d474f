"""Exception hierarchy shared by all ksos modules."""


class KsosError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(KsosError):
    """Invalid argument, configuration value, or contract violation."""


class NumericalError(KsosError):
    """A numerical routine failed (factorization, eigendecomposition, solver)."""
