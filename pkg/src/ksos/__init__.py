"""Adaptive, possibly asymmetric conformal prediction bands from kernel
sum-of-squares dual problems, with HSIC-driven hyperparameter selection and
split-conformal calibration."""

__version__ = "0.1.0"

from .errors import KsosError, NumericalError, ParameterError

__all__ = ["KsosError", "NumericalError", "ParameterError", "__version__"]
