"""Polynomial coefficient fields with analytic derivatives.

Drift and diffusion coefficients are represented as multivariate polynomial
maps so that value, gradient and Hessian are available exactly — the tangent
recursions in :mod:`wfdensity.sde` differentiate through these fields and
finite differencing would pollute the second-order terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# one polynomial term: (coefficient, exponent per input coordinate)
Term = tuple[float, tuple[int, ...]]


@dataclass
class PolynomialField:
    """Map R^{d_in} -> R^{d_out}, each component a polynomial in z."""

    d_in: int
    d_out: int
    terms: list  # list (length d_out) of lists of Term

    def __post_init__(self):
        if len(self.terms) != self.d_out:
            raise ValueError(f"expected {self.d_out} component term lists")
        for comp in self.terms:
            for coef, exps in comp:
                if len(exps) != self.d_in:
                    raise ValueError(f"exponent tuple {exps} has wrong length")

    @classmethod
    def constant(cls, values: Sequence[float], d_in: int) -> "PolynomialField":
        values = np.atleast_1d(np.asarray(values, dtype=float))
        zero = tuple([0] * d_in)
        terms = [[(float(v), zero)] if v != 0.0 else [] for v in values]
        return cls(d_in=d_in, d_out=len(values), terms=terms)

    @classmethod
    def affine(cls, A, c) -> "PolynomialField":
        """Field z -> c + A z."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        c = np.atleast_1d(np.asarray(c, dtype=float))
        d_out, d_in = A.shape
        terms = []
        for i in range(d_out):
            comp = []
            if c[i] != 0.0:
                comp.append((float(c[i]), tuple([0] * d_in)))
            for k in range(d_in):
                if A[i, k] != 0.0:
                    e = [0] * d_in
                    e[k] = 1
                    comp.append((float(A[i, k]), tuple(e)))
            terms.append(comp)
        return cls(d_in=d_in, d_out=d_out, terms=terms)

    @property
    def degree(self) -> int:
        return max((sum(e) for comp in self.terms for _, e in comp), default=0)

    def _monomial(self, z: np.ndarray, exps: Sequence[int]) -> np.ndarray:
        out = np.ones(z.shape[0])
        for k, e in enumerate(exps):
            if e:
                out = out * z[:, k] ** e
        return out

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.zeros((z.shape[0], self.d_out))
        for i, comp in enumerate(self.terms):
            for coef, exps in comp:
                out[:, i] += coef * self._monomial(z, exps)
        return out

    def grad(self, z: np.ndarray) -> np.ndarray:
        """d value_i / d z_k, shape (B, d_out, d_in)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.zeros((z.shape[0], self.d_out, self.d_in))
        for i, comp in enumerate(self.terms):
            for coef, exps in comp:
                for k, e in enumerate(exps):
                    if e:
                        de = list(exps)
                        de[k] -= 1
                        out[:, i, k] += coef * e * self._monomial(z, de)
        return out

    def hess(self, z: np.ndarray) -> np.ndarray:
        """d^2 value_i / d z_k d z_l, shape (B, d_out, d_in, d_in)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.zeros((z.shape[0], self.d_out, self.d_in, self.d_in))
        for i, comp in enumerate(self.terms):
            for coef, exps in comp:
                for k, ek in enumerate(exps):
                    if not ek:
                        continue
                    for l, el in enumerate(exps):
                        if k == l:
                            if ek >= 2:
                                de = list(exps)
                                de[k] -= 2
                                out[:, i, k, k] += coef * ek * (ek - 1) * self._monomial(z, de)
                        elif el:
                            de = list(exps)
                            de[k] -= 1
                            de[l] -= 1
                            out[:, i, k, l] += coef * ek * el * self._monomial(z, de)
        return out

    def directional(self, other: "PolynomialField", z: np.ndarray) -> np.ndarray:
        """(d_other self)(z) = other(z) . grad self, shape (B, d_out)."""
        return np.einsum("bik,bk->bi", self.grad(z), other.value(z))


def _merge_terms(terms: list) -> list:
    acc: dict = {}
    for coef, exps in terms:
        acc[exps] = acc.get(exps, 0.0) + coef
    return [(c, e) for e, c in acc.items() if c != 0.0]


def poly_add(a: PolynomialField, b: PolynomialField, scale_b: float = 1.0) -> PolynomialField:
    """a + scale_b * b, componentwise."""
    if (a.d_in, a.d_out) != (b.d_in, b.d_out):
        raise ValueError("field shapes differ")
    terms = [_merge_terms(ca + [(scale_b * c, e) for c, e in cb])
             for ca, cb in zip(a.terms, b.terms)]
    return PolynomialField(d_in=a.d_in, d_out=a.d_out, terms=terms)


def _term_derivative(coef: float, exps: tuple, k: int) -> Optional[Term]:
    if exps[k] == 0:
        return None
    de = list(exps)
    de[k] -= 1
    return (coef * exps[k], tuple(de))


def directional_field(f: PolynomialField, g: PolynomialField) -> PolynomialField:
    """The derivative field (d_g f)^i = g . grad f^i, assembled symbolically.

    Products of polynomial terms stay polynomial, so the result carries exact
    gradients and Hessians of its own.
    """
    if g.d_out != f.d_in or g.d_in != f.d_in:
        raise ValueError("direction field must map the state space to itself")
    out = []
    for comp in f.terms:
        acc = []
        for coef, exps in comp:
            for k in range(f.d_in):
                der = _term_derivative(coef, exps, k)
                if der is None:
                    continue
                for gc, ge in g.terms[k]:
                    acc.append((der[0] * gc, tuple(d + e for d, e in zip(der[1], ge))))
        out.append(_merge_terms(acc))
    return PolynomialField(d_in=f.d_in, d_out=f.d_out, terms=out)


@dataclass
class BoundednessReport:
    """Sampled sup-norms of a field and its derivatives over a box."""

    max_value: float
    max_grad: float
    max_hess: float
    bounded: bool
    waived: bool = False


def boundedness_scan(fld: PolynomialField, box: Sequence[tuple[float, float]],
                     n_samples: int = 4096, threshold: float = 1e3,
                     waiver: bool = False, seed: int = 0) -> BoundednessReport:
    """Sample the box and report sup-norms; a waiver accepts unbounded growth.

    Polynomial coefficients of positive degree are globally unbounded; the
    scan certifies behavior on the experiment's compact box only.
    """
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    rng = np.random.default_rng(seed)
    z = lo + rng.random((n_samples, len(box))) * (hi - lo)
    mv = float(np.max(np.abs(fld.value(z))))
    mg = float(np.max(np.abs(fld.grad(z))))
    mh = float(np.max(np.abs(fld.hess(z))))
    globally_bounded = fld.degree == 0
    ok = max(mv, mg, mh) <= threshold and (globally_bounded or waiver)
    return BoundednessReport(max_value=mv, max_grad=mg, max_hess=mh,
                             bounded=ok, waived=waiver and not globally_bounded)
