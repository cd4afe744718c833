"""Scalable exact Gaussian-process regression with iterative linear solvers."""

from .errors import InputError, NumericalError, UnsupportedKernelError
from .kernels import Matern, ModelSpec, Periodic, Product, Scaled, SquaredExponential

__all__ = [
    "InputError",
    "NumericalError",
    "UnsupportedKernelError",
    "ModelSpec",
    "SquaredExponential",
    "Matern",
    "Periodic",
    "Product",
    "Scaled",
]

__version__ = "0.1.0"
