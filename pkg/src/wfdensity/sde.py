"""Euler simulation with pathwise first/second tangent processes.

The state (X, Y) in R^{d+n} is driven by m Brownian components.  The tangent
recursions differentiate the discrete Euler map itself with respect to the
normalized Gaussian increments, so the resulting jac/hess are *exact*
derivatives of the simulated functional — the quadrature and finite-difference
oracles in the tests rely on this exactness.

The module also builds the conditional decomposition

    F = F_past + G_delta + R_delta

over the last-window chart [T-delta, T], with G conditionally Gaussian given
the past, covariance C_delta, and R the pathwise residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fields import PolynomialField
from .malliavin import GaussianChart, SmoothFunctional

d_float = np.float64


class NonFiniteStateError(RuntimeError):
    """Euler state overflowed; carries the offending step index."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite state encountered at Euler step {step}")


class GridAlignmentError(ValueError):
    """delta is not a whole number of grid steps."""


class ModelShapeError(ValueError):
    """Operation requires a model of a specific structural shape."""


@dataclass
class ModelSpec:
    """Coefficient fields of the system dX = sigma dW + b dt, dY = alpha dW + beta dt.

    All fields map the full state z = (x, y) in R^{d+n}.  ``sigma_cols`` holds
    one R^d-valued field per driving component; ``alpha_cols`` likewise for Y.
    """

    name: str
    d: int
    m: int
    sigma_cols: list
    b: PolynomialField
    n: int = 0
    alpha_cols: Optional[list] = None
    beta: Optional[PolynomialField] = None
    h1: bool = False
    unbounded_waiver: bool = False

    def __post_init__(self):
        if len(self.sigma_cols) != self.m:
            raise ValueError(f"need {self.m} diffusion columns, got {len(self.sigma_cols)}")
        if self.n > 0 and (self.alpha_cols is None or self.beta is None):
            raise ValueError("models with a Y component need alpha and beta fields")

    @property
    def state_dim(self) -> int:
        return self.d + self.n

    @property
    def linear_gaussian(self) -> bool:
        """Constant diffusion + affine drift: the terminal state is linear in Z."""
        fields_deg0 = all(c.degree == 0 for c in self.sigma_cols)
        if self.alpha_cols is not None:
            fields_deg0 = fields_deg0 and all(c.degree == 0 for c in self.alpha_cols)
        drift_aff = self.b.degree <= 1 and (self.beta is None or self.beta.degree <= 1)
        return fields_deg0 and drift_aff

    def drift(self, z: np.ndarray) -> np.ndarray:
        v = self.b.value(z)
        if self.n:
            v = np.concatenate([v, self.beta.value(z)], axis=1)
        return v

    def diffusion(self, z: np.ndarray) -> np.ndarray:
        """(B, state_dim, m)."""
        cols = [c.value(z) for c in self.sigma_cols]
        if self.n:
            ycols = [c.value(z) for c in self.alpha_cols]
            cols = [np.concatenate([cx, cy], axis=1) for cx, cy in zip(cols, ycols)]
        return np.stack(cols, axis=-1)

    def drift_grad(self, z: np.ndarray) -> np.ndarray:
        g = self.b.grad(z)
        if self.n:
            g = np.concatenate([g, self.beta.grad(z)], axis=1)
        return g

    def drift_hess(self, z: np.ndarray) -> np.ndarray:
        h = self.b.hess(z)
        if self.n:
            h = np.concatenate([h, self.beta.hess(z)], axis=1)
        return h

    def diffusion_grad(self, z: np.ndarray) -> np.ndarray:
        """(B, state_dim, m, state_dim)."""
        cols = [c.grad(z) for c in self.sigma_cols]
        if self.n:
            ycols = [c.grad(z) for c in self.alpha_cols]
            cols = [np.concatenate([cx, cy], axis=1) for cx, cy in zip(cols, ycols)]
        return np.stack(cols, axis=2)

    def diffusion_hess(self, z: np.ndarray) -> np.ndarray:
        """(B, state_dim, m, state_dim, state_dim)."""
        cols = [c.hess(z) for c in self.sigma_cols]
        if self.n:
            ycols = [c.hess(z) for c in self.alpha_cols]
            cols = [np.concatenate([cx, cy], axis=1) for cx, cy in zip(cols, ycols)]
        return np.stack(cols, axis=2)


# ---------------------------------------------------------------------------
# model registry


def make_model(name: str, **params) -> ModelSpec:
    """Named coefficient sets with parameter maps (serializable in configs)."""
    key = name.lower()
    if key in ("brownian1d", "gaussian1d"):
        s = float(params.get("sigma", 1.0))
        return ModelSpec(name=key, d=1, m=1,
                         sigma_cols=[PolynomialField.constant([s], 1)],
                         b=PolynomialField.constant([float(params.get("b", 0.0))], 1))
    if key == "gaussian2d":
        s = float(params.get("sigma", 1.0))
        return ModelSpec(name=key, d=2, m=2,
                         sigma_cols=[PolynomialField.constant([s, 0.0], 2),
                                     PolynomialField.constant([0.0, s], 2)],
                         b=PolynomialField.constant([0.0, 0.0], 2))
    if key == "kolmogorov":
        # X^1 Brownian-driven, X^2 integrates kappa * X^1: weak-Hormander shape
        s = float(params.get("sigma", 1.0))
        kappa = float(params.get("kappa", 1.0))
        return ModelSpec(name=key, d=2, m=1,
                         sigma_cols=[PolynomialField.constant([s, 0.0], 2)],
                         b=PolynomialField(d_in=2, d_out=2,
                                           terms=[[], [(kappa, (1, 0))]]),
                         h1=True, unbounded_waiver=True)
    if key == "ou1d":
        s = float(params.get("sigma", 1.0))
        kappa = float(params.get("kappa", 1.0))
        return ModelSpec(name=key, d=1, m=1,
                         sigma_cols=[PolynomialField.constant([s], 1)],
                         b=PolynomialField.affine([[-kappa]], [0.0]),
                         unbounded_waiver=True)
    if key == "geometric1d":
        a = float(params.get("a", 0.3))
        return ModelSpec(name=key, d=1, m=1,
                         sigma_cols=[PolynomialField(d_in=1, d_out=1, terms=[[(a, (1,))]])],
                         b=PolynomialField.constant([0.0], 1),
                         unbounded_waiver=True)
    if key == "elliptic2d":
        g = float(params.get("gamma", 0.2))
        sigma1 = PolynomialField(d_in=2, d_out=2, terms=[[(1.0, (0, 0)), (g, (0, 1))], []])
        sigma2 = PolynomialField(d_in=2, d_out=2, terms=[[], [(1.0, (0, 0)), (g, (1, 0))]])
        b = PolynomialField.affine([[-0.5, 0.0], [0.0, -0.5]], [0.0, 0.0])
        return ModelSpec(name=key, d=2, m=2, sigma_cols=[sigma1, sigma2], b=b,
                         unbounded_waiver=True)
    raise KeyError(f"unknown model '{name}'")


MODEL_NAMES = ("brownian1d", "gaussian1d", "gaussian2d", "kolmogorov",
               "ou1d", "geometric1d", "elliptic2d")


# ---------------------------------------------------------------------------
# simulation


def _z_steps(Z: np.ndarray, chart: GaussianChart):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != chart.n:
        raise ValueError(f"Z has {Z.shape[1]} coordinates, chart needs {chart.n}")
    return Z


def euler_simulate(model: ModelSpec, z0, chart: GaussianChart, Z: np.ndarray,
                   keep_path: bool = True) -> np.ndarray:
    """Euler path (B, steps+1, state_dim), or terminal (B, state_dim) only."""
    Z = _z_steps(Z, chart)
    B = Z.shape[0]
    D = model.state_dim
    z0 = np.broadcast_to(np.atleast_1d(np.asarray(z0, dtype=float)), (D,))
    S = np.tile(z0, (B, 1))
    m = chart.m
    out = np.empty((B, chart.steps + 1, D)) if keep_path else None
    if keep_path:
        out[:, 0] = S
    for k in range(chart.steps):
        dt = chart.dt[k]
        dW = np.sqrt(dt) * Z[:, k * m:(k + 1) * m]
        S = S + model.drift(S) * dt + np.einsum("bim,bm->bi", model.diffusion(S), dW)
        if not np.all(np.isfinite(S)):
            raise NonFiniteStateError(k)
        if keep_path:
            out[:, k + 1] = S
    return out if keep_path else S


def _tangent_recursion(model: ModelSpec, paths: np.ndarray, chart: GaussianChart,
                       Z: np.ndarray, with_hessian: bool):
    B = Z.shape[0]
    D = model.state_dim
    m = chart.m
    na = chart.n
    U = np.zeros((B, D, na))
    V = np.zeros((B, D, na, na)) if with_hessian else None
    eye = np.eye(D)
    for k in range(chart.steps):
        S = paths[:, k]
        dt = chart.dt[k]
        s = np.sqrt(dt)
        Zk = Z[:, k * m:(k + 1) * m]
        gB = model.drift_grad(S)
        gS = model.diffusion_grad(S)  # (B, D, m, D)
        # M^{iq} = delta_{iq} + dt dB^i/dz^q + s sum_j Z_j dSigma_j^i/dz^q
        M = eye[None] + gB * dt + s * np.einsum("bijq,bj->biq", gS, Zk)
        if with_hessian:
            hB = model.drift_hess(S)
            hS = model.diffusion_hess(S)  # (B, D, m, D, D)
            Heff = hB * dt + s * np.einsum("bijpq,bj->bipq", hS, Zk)
            w1 = np.einsum("bipq,bpa->biaq", Heff, U)
            quad = np.einsum("biaq,bqc->biac", w1, U)
            V = np.einsum("biq,bqac->biac", M, V) + quad
            for j in range(m):
                c = chart.flat_index(k, j)
                cross = s * np.einsum("biq,bqa->bia", gS[:, :, j, :], U)
                V[:, :, c, :] += cross
                V[:, :, :, c] += cross
        U = np.einsum("biq,bqa->bia", M, U)
        diff = model.diffusion(S)
        for j in range(m):
            U[:, :, chart.flat_index(k, j)] += s * diff[:, :, j]
    return U, V


def tangent_derivatives(model: ModelSpec, paths: np.ndarray, chart: GaussianChart,
                        Z: np.ndarray, with_hessian: Optional[bool] = None,
                        x_only: bool = True) -> SmoothFunctional:
    """Exact derivatives of the terminal Euler state w.r.t. the coordinates.

    ``with_hessian=None`` decides automatically: models whose terminal state
    is linear in Z get a declared-zero Hessian.  For such models the Jacobian
    is path-independent and computed once, then broadcast over the batch.
    """
    Z = _z_steps(Z, chart)
    B = Z.shape[0]
    if paths.shape[0] != B or paths.shape[1] != chart.steps + 1:
        raise ValueError(f"path array shape {paths.shape} inconsistent with chart/Z")
    if with_hessian is None:
        with_hessian = not model.linear_gaussian
    if model.linear_gaussian:
        U, _ = _tangent_recursion(model, paths[:1], chart, Z[:1], with_hessian=False)
        U = np.broadcast_to(U, (B,) + U.shape[1:])
        V = None
    else:
        U, V = _tangent_recursion(model, paths, chart, Z, with_hessian)
    terminal = paths[:, -1]
    if x_only:
        value = terminal[:, :model.d]
        jac = U[:, :model.d]
        hess = V[:, :model.d] if V is not None else None
    else:
        value, jac, hess = terminal, U, V
    return SmoothFunctional(value=value, jac=jac, hess=hess)


# ---------------------------------------------------------------------------
# conditional decomposition over the last window


@dataclass
class Decomposition:
    """F = F_past + G + R over the window chart [T-delta, T].

    ``R_functional`` carries the realized residual with its derivatives in the
    inner coordinates; ``R_sampler(rng, N_inner)`` draws fresh inner futures
    (outer-major batch of size B*N_inner), conditionally on the outer paths.
    """

    kind: str
    delta: float
    k0: int
    inner_chart: GaussianChart
    F_past: np.ndarray
    C_delta: np.ndarray
    G: np.ndarray
    R: np.ndarray
    R_functional: SmoothFunctional
    R_sampler: Callable[[np.random.Generator, int], SmoothFunctional]
    meta: dict = field(default_factory=dict)

    @property
    def det_C(self) -> np.ndarray:
        return np.linalg.det(self.C_delta)

    @property
    def F(self) -> np.ndarray:
        return self.F_past + self.G + self.R


def _window_index(chart: GaussianChart, delta: float) -> int:
    target = chart.T - delta
    k0 = int(np.argmin(np.abs(chart.grid - target)))
    if abs(chart.grid[k0] - target) > 1e-9 * max(chart.T, 1.0):
        raise GridAlignmentError(
            f"delta={delta} does not land on a grid point (nearest {chart.T - chart.grid[k0]})"
        )
    if k0 >= chart.steps:
        raise GridAlignmentError("delta must cover at least one step")
    return k0


def _weighted_dw_sums(inner_chart: GaussianChart, Zin: np.ndarray, weights: np.ndarray):
    """sum_k weights[k] sqrt(dt_k) Z_{(k,j)}, shape (B, m)."""
    B = Zin.shape[0]
    zr = Zin.reshape(B, inner_chart.steps, inner_chart.m)
    w = (weights * np.sqrt(inner_chart.dt))[None, :, None]
    return np.sum(zr * w, axis=1)


def decompose_ito(model: ModelSpec, paths: np.ndarray, chart: GaussianChart,
                  Z: np.ndarray, delta: float) -> Decomposition:
    """Generic decomposition: G freezes the diffusion coefficient at T-delta."""
    Z = _z_steps(Z, chart)
    k0 = _window_index(chart, delta)
    d = model.d
    m = chart.m
    inner_chart = GaussianChart(grid=chart.grid[k0:], m=m)
    Zin = Z[:, k0 * m:]
    start = paths[:, k0]
    sig_past = model.diffusion(start)[:, :d, :]
    C = delta * np.einsum("bim,bjm->bij", sig_past, sig_past)
    ones = np.ones(inner_chart.steps)

    def g_and_jac(sig_p, Zi, B):
        dw = _weighted_dw_sums(inner_chart, Zi, ones)
        G = np.einsum("bim,bm->bi", sig_p, dw)
        jac_G = np.zeros((B, d, inner_chart.n))
        sq = np.sqrt(inner_chart.dt)
        for k in range(inner_chart.steps):
            for j in range(m):
                jac_G[:, :, inner_chart.flat_index(k, j)] = sig_p[:, :, j] * sq[k]
        return G, jac_G

    B = Zin.shape[0]
    G, jac_G = g_and_jac(sig_past, Zin, B)
    F_past = start[:, :d]
    X_T = paths[:, -1, :d]
    R = X_T - F_past - G
    Ff = tangent_derivatives(model, paths[:, k0:], inner_chart, Zin, with_hessian=None)
    Rf = SmoothFunctional(value=R, jac=Ff.jac - jac_G, hess=Ff.hess)

    def r_sampler(rng: np.random.Generator, N_inner: int) -> SmoothFunctional:
        starts = np.repeat(start, N_inner, axis=0)
        Znew = rng.standard_normal((B * N_inner, inner_chart.n))
        p = _euler_from(model, starts, inner_chart, Znew)
        sig_rep = np.repeat(sig_past, N_inner, axis=0)
        Gn, jGn = g_and_jac(sig_rep, Znew, B * N_inner)
        Fn = tangent_derivatives(model, p, inner_chart, Znew, with_hessian=None)
        Rn = p[:, -1, :d] - np.repeat(F_past, N_inner, axis=0) - Gn
        return SmoothFunctional(value=Rn, jac=Fn.jac - jGn, hess=Fn.hess)

    return Decomposition(kind="ito", delta=delta, k0=k0, inner_chart=inner_chart,
                         F_past=F_past, C_delta=C, G=G, R=R,
                         R_functional=Rf, R_sampler=r_sampler)


def _euler_from(model: ModelSpec, starts: np.ndarray, chart: GaussianChart,
                Z: np.ndarray) -> np.ndarray:
    """Euler path from per-sample starting states (batch of initial points)."""
    B = Z.shape[0]
    D = model.state_dim
    out = np.empty((B, chart.steps + 1, D))
    S = np.array(starts, dtype=float)
    out[:, 0] = S
    m = chart.m
    for k in range(chart.steps):
        dt = chart.dt[k]
        dW = np.sqrt(dt) * Z[:, k * m:(k + 1) * m]
        S = S + model.drift(S) * dt + np.einsum("bim,bm->bi", model.diffusion(S), dW)
        if not np.all(np.isfinite(S)):
            raise NonFiniteStateError(k)
        out[:, k + 1] = S
    return out


def _require_h1(model: ModelSpec):
    ok = (model.h1 and model.d == 2 and model.m == 1 and model.n == 0
          and not model.sigma_cols[0].terms[1])
    if not ok:
        raise ModelShapeError(
            "decomposition requires the 2D single-noise shape with a noiseless "
            "second component"
        )


def h1_local_data(model: ModelSpec, z: np.ndarray):
    """(sigma_1, d_1 b_2) evaluated at z for the degenerate 2D shape."""
    s1 = model.sigma_cols[0].value(z)[:, 0]
    p12 = model.b.grad(z)[:, 1, 0]
    return s1, p12


def h1_covariance(model: ModelSpec, z: np.ndarray, delta: float) -> np.ndarray:
    """Conditional covariance of (G^1, G^2): delta sigma_1^2 [[1, p d/2], [p d/2, p^2 d^2/3]]."""
    s1, p = h1_local_data(model, z)
    B = len(s1)
    C = np.empty((B, 2, 2))
    C[:, 0, 0] = 1.0
    C[:, 0, 1] = C[:, 1, 0] = p * delta / 2.0
    C[:, 1, 1] = p**2 * delta**2 / 3.0
    return delta * s1[:, None, None] ** 2 * C


def decompose_hormander(model: ModelSpec, paths: np.ndarray, chart: GaussianChart,
                        Z: np.ndarray, delta: float,
                        skeleton_x: np.ndarray) -> Decomposition:
    """Decomposition of F = X_T - x_T around the deterministic skeleton x.

    ``skeleton_x`` holds the skeleton's X-values on the full chart grid,
    shape (steps+1, 2).  The leading term of the noiseless component is the
    double stochastic integral with the frozen bracket coefficient; its
    conditional covariance with the first component is the explicit 2x2
    matrix returned by :func:`h1_covariance`.
    """
    _require_h1(model)
    Z = _z_steps(Z, chart)
    k0 = _window_index(chart, delta)
    skeleton_x = np.asarray(skeleton_x, dtype=float)
    if skeleton_x.shape != (chart.steps + 1, 2):
        raise ValueError(f"skeleton value table has shape {skeleton_x.shape}")
    inner_chart = GaussianChart(grid=chart.grid[k0:], m=1)
    Zin = Z[:, k0:]
    start = paths[:, k0]
    B = Zin.shape[0]
    s1, p12 = h1_local_data(model, start)
    C = h1_covariance(model, start, delta)
    T = chart.T
    ones = np.ones(inner_chart.steps)
    tleft = T - inner_chart.grid[:-1]  # (T - s) at left endpoints

    def g_and_jac(s1_, p12_, Zi, Bn):
        dw0 = _weighted_dw_sums(inner_chart, Zi, ones)[:, 0]
        dw1 = _weighted_dw_sums(inner_chart, Zi, tleft)[:, 0]
        G = np.stack([s1_ * dw0, s1_ * p12_ * dw1], axis=1)
        jac_G = np.zeros((Bn, 2, inner_chart.n))
        sq = np.sqrt(inner_chart.dt)
        for k in range(inner_chart.steps):
            jac_G[:, 0, k] = s1_ * sq[k]
            jac_G[:, 1, k] = s1_ * p12_ * tleft[k] * sq[k]
        return G, jac_G

    G, jac_G = g_and_jac(s1, p12, Zin, B)
    F_past = start[:, :2] - skeleton_x[k0]
    F = paths[:, -1, :2] - skeleton_x[-1]
    R = F - F_past - G
    Ff = tangent_derivatives(model, paths[:, k0:], inner_chart, Zin, with_hessian=None)
    Rf = SmoothFunctional(value=R, jac=Ff.jac - jac_G, hess=Ff.hess)

    def r_sampler(rng: np.random.Generator, N_inner: int) -> SmoothFunctional:
        starts = np.repeat(start, N_inner, axis=0)
        Znew = rng.standard_normal((B * N_inner, inner_chart.n))
        p = _euler_from(model, starts, inner_chart, Znew)
        Gn, jGn = g_and_jac(np.repeat(s1, N_inner), np.repeat(p12, N_inner),
                            Znew, B * N_inner)
        Fn = tangent_derivatives(model, p, inner_chart, Znew, with_hessian=None)
        Rn = (p[:, -1, :2] - skeleton_x[-1]) - np.repeat(F_past, N_inner, axis=0) - Gn
        return SmoothFunctional(value=Rn, jac=Fn.jac - jGn, hess=Fn.hess)

    return Decomposition(kind="hormander", delta=delta, k0=k0,
                         inner_chart=inner_chart, F_past=F_past, C_delta=C,
                         G=G, R=R, R_functional=Rf, R_sampler=r_sampler,
                         meta={"sigma1_past": s1, "d1b2_past": p12})


# ---------------------------------------------------------------------------
# conditional Sobolev-type statistic


class SingularConditionalCovariance(ValueError):
    """C_delta singular where the scaled norm is required."""


@dataclass
class ThetaEstimate:
    """Nested Monte Carlo estimate of the scaled residual norm, per outer path."""

    q: float
    value: np.ndarray
    std_error: np.ndarray
    inner_samples: int

    def as_scalar(self) -> tuple[float, float]:
        if len(np.atleast_1d(self.value)) != 1:
            raise ValueError("estimate holds more than one outer path")
        return float(self.value[0]), float(self.std_error[0])


def _inv_sqrt_psd(C: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh(C)
    if np.any(w <= 0):
        raise SingularConditionalCovariance(
            f"covariance not positive definite (min eigenvalue {np.min(w):.3e})"
        )
    return np.einsum("bik,bk,bjk->bij", Q, 1.0 / np.sqrt(w), Q)


def theta_summands(decomp: Decomposition, Rf: SmoothFunctional, q: float,
                   n_rep: int) -> np.ndarray:
    """Per-inner-sample summand of theta^q for a batch replicated outer-major."""
    Cis = np.repeat(_inv_sqrt_psd(decomp.C_delta), n_rep, axis=0)
    rbar = np.einsum("bij,bj->bi", Cis, Rf.value)
    t0 = np.sum(rbar**2, axis=1) ** (q / 2.0)
    jbar = np.einsum("bij,bjk->bik", Cis, Rf.jac)
    s1 = np.einsum("bik->b", jbar**2)
    out = t0 + s1 ** (q / 2.0)
    if Rf.hess is not None:
        hbar = np.einsum("bij,bjkl->bikl", Cis, Rf.hess)
        s2 = np.einsum("bikl->b", hbar**2)
        out = out + s2 ** (q / 2.0)
    return out


def conditional_theta(decomp: Decomposition, q: float, N_inner: int,
                      rng: np.random.Generator) -> ThetaEstimate:
    """theta_{delta,q} per outer path by nested Monte Carlo over inner futures."""
    if N_inner < 2:
        raise ValueError("need at least 2 inner samples")
    Rf = decomp.R_sampler(rng, N_inner)
    B = decomp.F_past.shape[0]
    summand = theta_summands(decomp, Rf, q, N_inner).reshape(B, N_inner)
    est_q = np.mean(summand, axis=1)
    se_q = np.std(summand, axis=1, ddof=1) / np.sqrt(N_inner)
    theta = est_q ** (1.0 / q)
    # delta method through x -> x^{1/q}
    safe = np.maximum(est_q, 1e-300)
    se = se_q / (q * safe ** ((q - 1.0) / q))
    return ThetaEstimate(q=q, value=theta, std_error=se, inner_samples=N_inner)


# ---------------------------------------------------------------------------
# Monte Carlo plumbing for the density estimators


def density_sampler(model: ModelSpec, z0, chart: GaussianChart,
                    rng: np.random.Generator):
    """Sampler closure feeding the Riesz estimators: N -> (F, W) draws.

    Simulation is chunked so that peak memory stays bounded for long charts.
    """
    from .malliavin import ibp_weight

    chunk = max(1, int(4_000_000 // max(chart.n, 1)))

    def sampler(N: int):
        Fs, Ws = [], []
        done = 0
        while done < N:
            nb = min(chunk, N - done)
            Zc = rng.standard_normal((nb, chart.n))
            paths = euler_simulate(model, z0, chart, Zc)
            F = tangent_derivatives(model, paths, chart, Zc)
            W = ibp_weight(chart, Zc, F)
            Fs.append(F.value)
            Ws.append(W)
            done += nb
        return np.concatenate(Fs), np.concatenate(Ws)

    return sampler
