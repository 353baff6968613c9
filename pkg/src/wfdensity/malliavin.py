"""Finite-dimensional Malliavin calculus on a Gaussian coordinate chart.

A functional of finitely many i.i.d. standard normal coordinates
``Z = (Z_1, ..., Z_n)`` is represented by its value, gradient and Hessian
with respect to those coordinates (:class:`SmoothFunctional`).  On such
cylinder functionals the Malliavin operators reduce exactly to
finite-dimensional linear algebra:

* covariance matrix    ``sigma^{ij} = sum_k dF^i/dZ_k dF^j/dZ_k``
* number operator      ``LF = Z . grad F - trace Hess F``
* IBP weight           ``E(d_i f(F) G psi(Theta)) = E(f(F) W_i)``

All arrays carry a leading batch axis so that Monte Carlo samples and
quadrature nodes are processed in bulk.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import localizer, localizer_log_deriv


class DegenerateCovarianceError(ValueError):
    """Malliavin covariance matrix singular where the weight is needed."""

    def __init__(self, det_min: float):
        self.det_min = det_min
        super().__init__(
            f"Malliavin covariance matrix is singular on the active set "
            f"(min det = {det_min:.3e})"
        )


class UnsupportedOrderError(ValueError):
    """Iterated integration by parts requested beyond the supported order."""


@dataclass
class GaussianChart:
    """Finite Wiener chart: time grid and driving Brownian components.

    The coordinate with flat index ``k*m + j`` is the normalized increment of
    component ``j`` over step ``k``; the raw increment is ``sqrt(dt_k) Z``.
    """

    grid: np.ndarray
    m: int = 1

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 1 or len(self.grid) < 2:
            raise ValueError("grid must hold at least two time points")
        self.dt = np.diff(self.grid)
        if np.any(self.dt <= 0):
            raise ValueError("grid times must be strictly increasing")
        self.steps = len(self.dt)
        self.n = self.steps * self.m

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    def flat_index(self, k: int, j: int) -> int:
        return k * self.m + j

    def sqrt_dt_coords(self) -> np.ndarray:
        """sqrt(dt) per flat coordinate, shape (n,)."""
        return np.repeat(np.sqrt(self.dt), self.m)


def unit_chart(n: int = 1) -> GaussianChart:
    """Chart of n unit time steps: coordinates are the increments themselves."""
    return GaussianChart(grid=np.arange(n + 1, dtype=float), m=1)


_HESS_ASYM_TOL = 1e-8


@dataclass
class SmoothFunctional:
    """Value, gradient and Hessian of F in the normalized coordinates.

    Shapes: value (B, d), jac (B, d, n), hess (B, d, n, n) or None when the
    second derivative vanishes identically (declared-zero, not missing).
    """

    value: np.ndarray
    jac: np.ndarray
    hess: Optional[np.ndarray] = None

    def __post_init__(self):
        self.value = np.atleast_2d(np.asarray(self.value, dtype=float))
        self.jac = np.asarray(self.jac, dtype=float)
        if self.jac.ndim == 2:
            self.jac = self.jac[None]
        if self.jac.shape[:2] != self.value.shape:
            raise ValueError(
                f"jac shape {self.jac.shape} inconsistent with value {self.value.shape}"
            )
        if self.hess is not None:
            self.hess = np.asarray(self.hess, dtype=float)
            if self.hess.ndim == 3:
                self.hess = self.hess[None]
            b, d, n = self.jac.shape
            if self.hess.shape != (b, d, n, n):
                raise ValueError(f"hess shape {self.hess.shape}, expected {(b, d, n, n)}")
            asym = np.max(np.abs(self.hess - np.swapaxes(self.hess, -1, -2)))
            scale = max(np.max(np.abs(self.hess)), 1.0)
            if asym > _HESS_ASYM_TOL * scale:
                warnings.warn(
                    f"Hessian asymmetry {asym:.2e} beyond tolerance; symmetrizing",
                    stacklevel=2,
                )
            self.hess = 0.5 * (self.hess + np.swapaxes(self.hess, -1, -2))

    @property
    def batch(self) -> int:
        return self.value.shape[0]

    @property
    def dim(self) -> int:
        return self.value.shape[1]

    @property
    def n_coords(self) -> int:
        return self.jac.shape[2]

    def hess_or_zero(self) -> np.ndarray:
        if self.hess is not None:
            return self.hess
        b, d, n = self.jac.shape
        return np.zeros((b, d, n, n))

    @classmethod
    def constant(cls, value, n: int, batch: int = 1) -> "SmoothFunctional":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        d = value.shape[-1]
        v = np.broadcast_to(value, (batch, d)).copy()
        return cls(value=v, jac=np.zeros((batch, d, n)), hess=None)

    @classmethod
    def linear(cls, coef: np.ndarray, Z: np.ndarray, shift=0.0) -> "SmoothFunctional":
        """F = shift + coef @ Z with coef of shape (d, n), Z of shape (B, n)."""
        coef = np.atleast_2d(np.asarray(coef, dtype=float))
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        val = np.asarray(shift, dtype=float) + Z @ coef.T
        jac = np.broadcast_to(coef, (Z.shape[0],) + coef.shape).copy()
        return cls(value=val, jac=jac, hess=None)


@dataclass
class MalliavinData:
    """Covariance matrix, its inverse and determinant, per sample."""

    sigma: np.ndarray
    sigma_hat: np.ndarray
    det_sigma: np.ndarray


def covariance(F: SmoothFunctional) -> np.ndarray:
    """Malliavin covariance sigma^{ij} = <DF^i, DF^j>, shape (B, d, d)."""
    return np.einsum("bik,bjk->bij", F.jac, F.jac)


def malliavin_data(F: SmoothFunctional, active: Optional[np.ndarray] = None) -> MalliavinData:
    """Covariance, inverse and determinant; inversion restricted to ``active``.

    Rows outside ``active`` get a zero inverse (their weight is multiplied by
    psi = 0 downstream).  Raises if sigma is singular on the active set.
    """
    sigma = covariance(F)
    det = np.linalg.det(sigma)
    if active is None:
        active = np.ones(F.batch, dtype=bool)
    bad = active & (det <= 0)
    if np.any(bad):
        raise DegenerateCovarianceError(float(np.min(det[active])))
    sigma_hat = np.zeros_like(sigma)
    if np.any(active):
        sigma_hat[active] = np.linalg.inv(sigma[active])
    return MalliavinData(sigma=sigma, sigma_hat=sigma_hat, det_sigma=det)


def ou_operator(chart: GaussianChart, Z: np.ndarray, F: SmoothFunctional) -> np.ndarray:
    """Number-operator form of L: LF^i = Z . DF^i - trace Hess F^i."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    lf = np.einsum("bk,bik->bi", Z, F.jac)
    if F.hess is not None:
        lf = lf - np.einsum("bikk->bi", F.hess)
    return lf


def _dsigma(F: SmoothFunctional) -> np.ndarray:
    """D_k sigma^{ab} from jac and hess, shape (B, n, d, d)."""
    t = np.einsum("bakl,bcl->bkac", F.hess, F.jac)
    return t + np.swapaxes(t, -1, -2)


def _dsigma_contract(F: SmoothFunctional, sigma_hat: np.ndarray) -> np.ndarray:
    """sum_j <D sigma_hat^{ji}, DF^j> with D sigma_hat = -sh (D sigma) sh.

    Returns shape (B, d).  Assembled analytically to avoid differencing a
    matrix inverse near small determinants.
    """
    if F.hess is None:
        return np.zeros((F.batch, F.dim))
    dsig = _dsigma(F)  # (B, n, d, d)
    # P[a, k] = sum_j sigma_hat^{ja} jac[j, k]
    p = np.einsum("bja,bjk->bak", sigma_hat, F.jac)
    m = np.einsum("bak,bkac->bc", p, dsig)
    return -np.einsum("bci,bc->bi", sigma_hat, m)


def ibp_weight(
    chart: GaussianChart,
    Z: np.ndarray,
    F: SmoothFunctional,
    G: Optional[SmoothFunctional] = None,
    loc: Optional[tuple[SmoothFunctional, float]] = None,
) -> np.ndarray:
    """Integration-by-parts weight W with E(d_i f(F) G psi(Theta)) = E(f(F) W_i).

    ``G = None`` means the constant 1.  ``loc = (Theta, a)`` activates the
    smooth cutoff psi_a(Theta); without it psi == 1.  Returns (B, d).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    b, d, n = F.jac.shape
    if G is None:
        G = SmoothFunctional.constant(1.0, n=n, batch=b)
    if G.dim != 1:
        raise ValueError("G must be scalar")

    if loc is not None:
        theta, a = loc
        if theta.dim != 1:
            raise ValueError("localizer argument Theta must be scalar")
        tval = theta.value[:, 0]
        psi = np.asarray(localizer(a, np.maximum(tval, 0.0)))
        active = psi > 0
        log_d = np.zeros(b)
        if np.any(active):
            log_d[active] = localizer_log_deriv(a, np.maximum(tval[active], 0.0))
    else:
        theta = None
        psi = np.ones(b)
        active = np.ones(b, dtype=bool)
        log_d = np.zeros(b)

    data = malliavin_data(F, active=active)
    lf = ou_operator(chart, Z, F)  # (B, d)
    g = G.value[:, 0]

    # sum_j sigma_hat^{ji} LF^j
    term1 = g[:, None] * np.einsum("bji,bj->bi", data.sigma_hat, lf)
    term2 = g[:, None] * _dsigma_contract(F, data.sigma_hat)
    # sum_j sigma_hat^{ji} <DG, DF^j>
    dg_df = np.einsum("bk,bjk->bj", G.jac[:, 0, :], F.jac)
    term3 = np.einsum("bji,bj->bi", data.sigma_hat, dg_df)
    w = term1 - term2 - term3
    if theta is not None:
        dt_df = np.einsum("bk,bjk->bj", theta.jac[:, 0, :], F.jac)
        term4 = np.einsum("bji,bj->bi", data.sigma_hat, dt_df)
        w = w - (log_d * g)[:, None] * term4
    return psi[:, None] * w


def _weight_functional(
    chart: GaussianChart, Z: np.ndarray, F: SmoothFunctional, G: SmoothFunctional, i: int
) -> SmoothFunctional:
    """W_i(F, G) together with its first derivatives in Z.

    Valid when the third derivative of F vanishes (linear or quadratic
    functionals), which is what the Hessian-only representation can express.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    b, d, n = F.jac.shape
    data = malliavin_data(F)
    sh = data.sigma_hat
    lf = ou_operator(chart, Z, F)  # (B, d)
    hess = F.hess_or_zero()

    # D_k LF^j = jac[j,k] + sum_l Z_l hess[j,k,l]   (D^3 F = 0)
    dlf = F.jac + np.einsum("bl,bjkl->bjk", Z, hess)

    dsig = np.einsum("bakl,bcl->bkac", hess, F.jac)
    dsig = dsig + np.swapaxes(dsig, -1, -2)  # (B, n, d, d) = D_k sigma
    # D_k sigma_hat = -sh (D_k sigma) sh
    dsh = -np.einsum("bpa,bkac,bcq->bkpq", sh, dsig, sh)  # (B, n, d, d)

    g = G.value[:, 0]
    dg = G.jac[:, 0, :]  # (B, n)
    d2g = G.hess[:, 0] if G.hess is not None else np.zeros((b, n, n))

    # A^{ji} = <D sigma_hat^{ji}, DF^j>  per (j, i)
    a_ji = np.einsum("bkji,bjk->bji", dsh, F.jac)
    contract = np.einsum("bji->bi", a_ji)

    # value
    val = (
        g[:, None] * np.einsum("bji,bj->bi", sh, lf)
        - g[:, None] * contract
        - np.einsum("bji,bk,bjk->bi", sh, dg, F.jac)
    )[:, i]

    # derivative D_m W_i
    # D_m <D sigma_hat^{ji}, DF^j> under D^3 F = 0:
    #   D_m D_k sigma^{ab} = sum_p hess[a,k,p] hess[b,m,p] + hess[a,m,p] hess[b,k,p]
    ddsig = np.einsum("bakp,bcmp->bmkac", hess, hess)
    ddsig = ddsig + np.swapaxes(ddsig, -1, -2)  # symmetrize in (a, c)
    # D_m D_k sigma_hat = -(D_m sh) (D_k sig) sh - sh (D_m D_k sig) sh - sh (D_k sig)(D_m sh)
    t1 = np.einsum("bmpa,bkac,bcq->bmkpq", dsh, dsig, sh)
    t2 = np.einsum("bpa,bmkac,bcq->bmkpq", sh, ddsig, sh)
    ddsh = -(t1 + t2 + np.swapaxes(t1, -1, -2))
    # D_m of sum over nothing: keep (j, i) slice below

    dm_contract = (
        np.einsum("bmkji,bjk->bmji", ddsh, F.jac)
        + np.einsum("bkji,bjkm->bmji", dsh, hess)
    )

    dval = (
        np.einsum("bm,bji,bj->bmi", dg, sh, lf)
        + g[:, None, None] * np.einsum("bmji,bj->bmi", dsh, lf)
        + g[:, None, None] * np.einsum("bji,bjm->bmi", sh, dlf)
        - np.einsum("bm,bi->bmi", dg, contract)
        - g[:, None, None] * np.einsum("bmji->bmi", dm_contract)
        - np.einsum("bmji,bk,bjk->bmi", dsh, dg, F.jac)
        - np.einsum("bji,bkm,bjk->bmi", sh, d2g, F.jac)
        - np.einsum("bji,bk,bjkm->bmi", sh, dg, hess)
    )[:, :, i]

    return SmoothFunctional(value=val[:, None], jac=dval[:, None, :], hess=None)


def iterated_weight(
    chart: GaussianChart,
    Z: np.ndarray,
    F: SmoothFunctional,
    G: Optional[SmoothFunctional],
    alpha: Sequence[int],
) -> np.ndarray:
    """Iterated weight H_alpha with E(d_alpha f(F) G) = E(f(F) H_alpha).

    Supports |alpha| <= 2.  For |alpha| = 2 the recursion needs the weight of
    the first step as a differentiable functional, which the Hessian-only
    representation supports exactly when D^3 F = 0 (linear or quadratic F).
    """
    alpha = tuple(alpha)
    if len(alpha) == 0 or len(alpha) > 2:
        raise UnsupportedOrderError(f"multi-index order {len(alpha)} unsupported (max 2)")
    b, d, n = F.jac.shape
    if any(i < 0 or i >= d for i in alpha):
        raise ValueError(f"multi-index {alpha} out of range for dim {d}")
    if G is None:
        G = SmoothFunctional.constant(1.0, n=n, batch=b)
    if len(alpha) == 1:
        return ibp_weight(chart, Z, F, G)[:, alpha[0]]
    inner = _weight_functional(chart, Z, F, G, alpha[0])
    return ibp_weight(chart, Z, F, inner)[:, alpha[1]]


def sobolev_norm(samples: SmoothFunctional, L: int, p: float, chart: GaussianChart) -> float:
    """Monte Carlo Sobolev norm ||F||_{L,p} on the chart.

    In normalized coordinates the time integrals of the derivative kernels
    collapse to plain sums of squared jac/hess entries, so no grid weights
    appear explicitly.
    """
    if samples.batch == 0:
        raise ValueError("empty sample set")
    if L not in (1, 2):
        raise ValueError(f"derivative order L must be 1 or 2, got {L}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    total = np.mean(np.linalg.norm(samples.value, axis=1) ** p)
    d1 = np.einsum("bik->b", samples.jac**2)
    total += np.mean(d1 ** (p / 2.0))
    if L == 2:
        h = samples.hess
        if h is None:
            pass  # second derivative identically zero contributes nothing
        else:
            d2 = np.einsum("bikl->b", h**2)
            total += np.mean(d2 ** (p / 2.0))
    return float(total ** (1.0 / p))
