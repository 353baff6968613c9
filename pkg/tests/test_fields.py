import numpy as np
import pytest

from wfdensity.fields import BoundednessReport, PolynomialField, boundedness_scan


def fd_grad(fld, z, h=1e-6):
    z = np.atleast_2d(z)
    out = np.zeros((z.shape[0], fld.d_out, fld.d_in))
    for k in range(fld.d_in):
        e = np.zeros(fld.d_in)
        e[k] = h
        out[:, :, k] = (fld.value(z + e) - fld.value(z - e)) / (2 * h)
    return out


class TestPolynomialField:
    def test_constant(self):
        f = PolynomialField.constant([2.0, -1.0], d_in=3)
        z = np.random.default_rng(0).normal(size=(5, 3))
        assert np.allclose(f.value(z), [[2.0, -1.0]] * 5)
        assert np.allclose(f.grad(z), 0.0)
        assert np.allclose(f.hess(z), 0.0)
        assert f.degree == 0

    def test_affine(self):
        A = np.array([[1.0, 2.0], [0.0, -3.0]])
        c = np.array([0.5, 0.0])
        f = PolynomialField.affine(A, c)
        z = np.array([[1.0, 1.0], [2.0, -1.0]])
        assert np.allclose(f.value(z), c + z @ A.T)
        assert np.allclose(f.grad(z), np.broadcast_to(A, (2, 2, 2)))
        assert f.degree == 1

    def test_quadratic_derivatives_match_fd(self):
        # f(z) = (z1^2 z2, 3 z2^3)
        f = PolynomialField(d_in=2, d_out=2,
                            terms=[[(1.0, (2, 1))], [(3.0, (0, 3))]])
        rng = np.random.default_rng(1)
        z = rng.normal(size=(10, 2))
        assert np.allclose(f.grad(z), fd_grad(f, z), atol=1e-6)
        h = f.hess(z)
        assert np.allclose(h, np.swapaxes(h, -1, -2))
        assert np.allclose(h[:, 0, 0, 0], 2 * z[:, 1])
        assert np.allclose(h[:, 0, 0, 1], 2 * z[:, 0])
        assert np.allclose(h[:, 1, 1, 1], 18 * z[:, 1])

    def test_directional(self):
        f = PolynomialField.affine([[0.0, 0.0], [1.0, 0.0]], [0.0, 0.0])  # b=(0, z1)
        g = PolynomialField.constant([1.0, 0.0], d_in=2)  # sigma
        z = np.array([[0.3, -0.2]])
        assert np.allclose(f.directional(g, z), [[0.0, 1.0]])

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            PolynomialField(d_in=2, d_out=1, terms=[[(1.0, (1,))]])


class TestBoundednessScan:
    def test_constant_field_bounded(self):
        f = PolynomialField.constant([1.0], d_in=1)
        rep = boundedness_scan(f, [(-5, 5)])
        assert isinstance(rep, BoundednessReport)
        assert rep.bounded and not rep.waived

    def test_polynomial_needs_waiver(self):
        f = PolynomialField.affine([[1.0]], [0.0])
        assert not boundedness_scan(f, [(-5, 5)]).bounded
        rep = boundedness_scan(f, [(-5, 5)], waiver=True)
        assert rep.bounded and rep.waived
        assert rep.max_value == pytest.approx(5.0, rel=0.01)
