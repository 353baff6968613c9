"""Closed-form scalar kernels: Poisson kernel, Gaussian densities, cutoff.

Everything here is a pure function of its arguments.  The Poisson kernel
``Q_d`` is the fundamental solution of the Laplace equation in ``R^d``; its
gradient is the building block of the Riesz-transform density estimator.
The cutoff ``localizer`` is the smooth bump that turns a plain integration
by parts into a localized one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SingularKernelError(ValueError):
    """Kernel evaluated at its singular point."""


class SingularCovarianceError(ValueError):
    """A covariance matrix that must be inverted is (numerically) singular."""


def sphere_area(d: int) -> float:
    """Area of the unit sphere in R^d: 2 pi^{d/2} / Gamma(d/2)."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def poisson_kernel(d: int, x) -> np.ndarray | float:
    """Fundamental solution Q_d of the Laplacian in R^d.

    Q_1(x) = max(x, 0); Q_2(x) = ln|x| / a_2; Q_d(x) = -|x|^{2-d} / a_d for
    d > 2, with a_d the area of the unit sphere.  ``x`` may carry a leading
    batch axis.
    """
    x = np.asarray(x, dtype=float)
    if d == 1:
        return np.maximum(x if x.ndim == 0 or x.shape[-1] != 1 else x[..., 0], 0.0)
    r = np.linalg.norm(np.atleast_1d(x), axis=-1)
    if np.any(r == 0.0):
        raise SingularKernelError("poisson_kernel is singular at the origin for d >= 2")
    if d == 2:
        return np.log(r) / sphere_area(2)
    return -(r ** (2 - d)) / sphere_area(d)


def poisson_gradient(d: int, x) -> np.ndarray:
    """Gradient of Q_d.

    d = 1: the indicator of x > 0.  d >= 2: c_d * x / |x|^d with
    c_2 = 1/a_2 and c_d = (d-2)/a_d.
    """
    x = np.asarray(x, dtype=float)
    if d == 1:
        flat = x if x.ndim == 0 or x.shape[-1] != 1 else x[..., 0]
        out = (np.asarray(flat) > 0.0).astype(float)
        return out.reshape(np.shape(flat) + (1,)) if np.ndim(flat) else out.reshape(1)
    x = np.atleast_1d(x)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0.0):
        raise SingularKernelError("poisson_gradient is singular at the origin for d >= 2")
    c_d = 1.0 / sphere_area(2) if d == 2 else (d - 2) / sphere_area(d)
    return c_d * x / (r ** d)[..., None]


@dataclass
class GaussianSpec:
    """A nondegenerate Gaussian law on R^d."""

    dim: int
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if self.mean.shape != (self.dim,):
            raise ValueError(f"mean has shape {self.mean.shape}, expected ({self.dim},)")
        if self.covariance.shape != (self.dim, self.dim):
            raise ValueError("covariance shape inconsistent with dim")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")


def gaussian_density(spec: GaussianSpec, y) -> np.ndarray | float:
    """Multivariate normal density of ``spec`` at ``y`` (batchable)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = spec.dim
    sign, logdet = np.linalg.slogdet(spec.covariance)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularCovarianceError(
            f"covariance matrix is singular or not positive definite: {spec.covariance!r}"
        )
    try:
        inv = np.linalg.inv(spec.covariance)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"covariance matrix could not be inverted: {spec.covariance!r}"
        ) from exc
    z = y - spec.mean
    quad = np.einsum("...i,ij,...j->...", z, inv, z)
    norm = (2.0 * math.pi) ** (-d / 2.0) * math.exp(-0.5 * logdet)
    return norm * np.exp(-0.5 * quad)


@dataclass
class LocalizerSpec:
    """Threshold of the smooth cutoff: 1 on [0, a), 0 past 2a."""

    a: float

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError(f"localizer threshold must be positive, got {self.a}")


def localizer(a: float, x) -> np.ndarray | float:
    """Smooth cutoff: 1 on [0,a), exp(1 - a/(2a-x)) on [a,2a), 0 on [2a,inf)."""
    if a <= 0:
        raise ValueError(f"localizer threshold must be positive, got {a}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("localizer argument must be nonnegative")
    out = np.zeros_like(x, dtype=float)
    out = np.where(x < a, 1.0, out)
    mid = (x >= a) & (x < 2 * a)
    with np.errstate(divide="ignore", over="ignore"):
        gap = np.where(mid, 2 * a - x, 1.0)
        out = np.where(mid, np.exp(1.0 - a / gap), out)
    return out if out.ndim else float(out)


def localizer_log_deriv(a: float, x) -> np.ndarray | float:
    """(ln psi_a)'(x): 0 on [0,a), -a/(2a-x)^2 on [a,2a); undefined past 2a.

    At the kink x = a the right-hand branch value -1/a is used.
    """
    if a <= 0:
        raise ValueError(f"localizer threshold must be positive, got {a}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("localizer argument must be nonnegative")
    if np.any(x >= 2 * a):
        raise ValueError(
            "log-derivative of the localizer is undefined on [2a, inf); "
            "multiply by localizer(a, x) = 0 before reaching this point"
        )
    mid = x >= a
    gap = np.where(mid, 2 * a - x, 1.0)
    out = np.where(mid, -a / gap**2, 0.0)
    return out if out.ndim else float(out)


def c_p_bound(a: float, p: float) -> float:
    """Sharp bound for sup_x |(ln psi_a)'(x)|^p psi_a(x).

    Substituting y = a/(2a-x) on the decay branch gives
    |(ln psi_a)'|^p psi_a = e a^{-p} y^{2p} e^{-y} with y >= 1, whose
    supremum is e a^{-p} (2p)^{2p} e^{-2p}.
    """
    if a <= 0:
        raise ValueError(f"localizer threshold must be positive, got {a}")
    if p < 1:
        raise ValueError(f"moment order must be >= 1, got {p}")
    return math.e * a ** (-p) * (2 * p) ** (2 * p) * math.exp(-2 * p)
