"""Monte Carlo density and conditional-expectation estimators.

The density of a nondegenerate functional F is estimated as

    p_F(x) ~= mean_i  sum_j  dQ_d/dx_j (F_i - x) . W_ij

where W is the integration-by-parts weight of :mod:`wfdensity.malliavin`.
The per-sample summand is heavy tailed (|F - x|^{1-d} near the target), so
every estimate carries tail diagnostics; winsorization is available but off
by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernels import localizer, poisson_gradient


class DegenerateSampleError(ValueError):
    """All samples were dropped (F == x exactly for every draw)."""


@dataclass
class TailReport:
    """Diagnostics of the heavy-tailed Riesz summand."""

    max_abs_summand: float
    n_above_threshold: int
    threshold: float


@dataclass
class EstimatorResult:
    value: float
    std_error: float
    n_samples: int
    tail_report: TailReport
    n_dropped: int = 0
    flags: dict = field(default_factory=dict)


def _summarize(summands: np.ndarray, n_dropped: int, tail_threshold: float,
               winsor_quantile: Optional[float]) -> EstimatorResult:
    n = len(summands)
    if n < 2:
        raise ValueError(f"need at least 2 usable samples, got {n}")
    tail = TailReport(
        max_abs_summand=float(np.max(np.abs(summands))),
        n_above_threshold=int(np.sum(np.abs(summands) > tail_threshold)),
        threshold=tail_threshold,
    )
    flags = {}
    if winsor_quantile is not None:
        lo, hi = np.quantile(summands, [1 - winsor_quantile, winsor_quantile])
        summands = np.clip(summands, lo, hi)
        flags["winsorized"] = winsor_quantile
    value = float(np.mean(summands))
    std_error = float(np.std(summands, ddof=1) / np.sqrt(n))
    return EstimatorResult(value=value, std_error=std_error, n_samples=n,
                           tail_report=tail, n_dropped=n_dropped, flags=flags)


def riesz_summands(F: np.ndarray, W: np.ndarray, x) -> tuple[np.ndarray, int]:
    """Per-sample summand sum_j dQ_d(F - x)_j W_j; exact hits on x dropped."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    d = F.shape[1]
    x = np.broadcast_to(np.atleast_1d(np.asarray(x, dtype=float)), (d,))
    diff = F - x
    if d == 1:
        keep = np.ones(len(diff), dtype=bool)
        grad = (diff > 0).astype(float)
    else:
        keep = np.linalg.norm(diff, axis=1) > 0
        grad = np.zeros_like(diff)
        if np.any(keep):
            grad[keep] = poisson_gradient(d, diff[keep])
    s = np.einsum("bj,bj->b", grad, W)[keep]
    return s, int(len(diff) - keep.sum())


Sampler = Callable[[int], tuple]


def estimate_density(sampler: Sampler, x, N: int,
                     tail_threshold: float = 1e3,
                     winsor_quantile: Optional[float] = None) -> EstimatorResult:
    """Riesz-transform density estimate at x from N i.i.d. (F, W) draws."""
    if N < 2:
        raise ValueError(f"need N >= 2 samples, got {N}")
    F, W = sampler(N)
    s, dropped = riesz_summands(F, W, x)
    if len(s) == 0:
        raise DegenerateSampleError("every sample hit the target point exactly")
    return _summarize(s, dropped, tail_threshold, winsor_quantile)


@dataclass
class ConditionalResult:
    numerator: EstimatorResult
    denominator: EstimatorResult
    ratio: Optional[float]
    ratio_std_error: Optional[float]
    flags: dict = field(default_factory=dict)


def estimate_conditional(sampler: Sampler, x, N: int,
                         tail_threshold: float = 1e3) -> ConditionalResult:
    """E(G | F = x) as the ratio of two Riesz estimates on common samples.

    The ratio is reported only when the density estimate clears 3 of its own
    standard errors; the ratio's standard error comes from the delta method
    with the empirical covariance of the two summands.
    """
    if N < 2:
        raise ValueError(f"need N >= 2 samples, got {N}")
    F, W1, WG = sampler(N)
    s_den, dropped = riesz_summands(F, W1, x)
    s_num, _ = riesz_summands(F, WG, x)
    den = _summarize(s_den, dropped, tail_threshold, None)
    num = _summarize(s_num, dropped, tail_threshold, None)
    if den.value <= 3 * den.std_error:
        return ConditionalResult(numerator=num, denominator=den, ratio=None,
                                 ratio_std_error=None,
                                 flags={"denominator_indistinguishable_from_zero": True})
    r = num.value / den.value
    n = len(s_den)
    cov = np.cov(s_num, s_den, ddof=1)
    var_r = (cov[0, 0] + r**2 * cov[1, 1] - 2 * r * cov[0, 1]) / (den.value**2 * n)
    return ConditionalResult(numerator=num, denominator=den, ratio=float(r),
                             ratio_std_error=float(np.sqrt(max(var_r, 0.0))))


@dataclass
class LocalizedResult:
    density: EstimatorResult
    localization_mass: float
    localization_mass_std_error: float


def estimate_density_localized(sampler: Sampler, x, a: float, N: int,
                               tail_threshold: float = 1e3) -> LocalizedResult:
    """Density of F under the tilted measure psi_a(Theta) dP.

    The sampler must return (F, Theta, W) with W already carrying the
    localizer factor (the localized branch of the IBP weight).  Also reports
    the localization mass E(psi_a(Theta)).
    """
    if N < 2:
        raise ValueError(f"need N >= 2 samples, got {N}")
    F, theta, W = sampler(N)
    s, dropped = riesz_summands(F, W, x)
    if len(s) == 0:
        raise DegenerateSampleError("every sample hit the target point exactly")
    res = _summarize(s, dropped, tail_threshold, None)
    psi = np.asarray(localizer(a, np.maximum(np.asarray(theta, dtype=float).ravel(), 0.0)))
    return LocalizedResult(
        density=res,
        localization_mass=float(np.mean(psi)),
        localization_mass_std_error=float(np.std(psi, ddof=1) / np.sqrt(len(psi))),
    )


def worker_streams(seed: int, workers: int) -> list[np.random.Generator]:
    """Independent, reproducible per-worker generators from one master seed."""
    if workers < 1:
        raise ValueError("need at least one worker stream")
    children = np.random.SeedSequence(seed).spawn(workers)
    return [np.random.Generator(np.random.Philox(s)) for s in children]


def split_counts(N: int, workers: int) -> list[int]:
    """Partition N samples across workers, first streams taking the remainder."""
    base, extra = divmod(N, workers)
    return [base + (1 if i < extra else 0) for i in range(workers)]
