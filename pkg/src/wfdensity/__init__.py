"""Density estimation, positivity certificates and lower bounds for Wiener functionals."""

from . import kernels, malliavin, quadrature

__all__ = ["kernels", "malliavin", "quadrature"]
__version__ = "0.1.0"
