import math

import numpy as np
import pytest

from wfdensity.kernels import (
    GaussianSpec,
    SingularCovarianceError,
    SingularKernelError,
    c_p_bound,
    gaussian_density,
    localizer,
    localizer_log_deriv,
    poisson_gradient,
    poisson_kernel,
    sphere_area,
)


def test_sphere_area_small_dims():
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert sphere_area(4) == pytest.approx(2 * math.pi**2)


class TestPoissonKernel:
    def test_d1_positive_part(self):
        assert poisson_kernel(1, 2.0) == 2.0
        assert poisson_kernel(1, -3.0) == 0.0

    def test_d2_unit_circle(self):
        assert poisson_kernel(2, [1.0, 0.0]) == pytest.approx(0.0)

    def test_d3_unit_point(self):
        assert poisson_kernel(3, [1.0, 0.0, 0.0]) == pytest.approx(-1.0 / (4 * math.pi))

    def test_singular_origin(self):
        with pytest.raises(SingularKernelError):
            poisson_kernel(2, [0.0, 0.0])
        with pytest.raises(SingularKernelError):
            poisson_gradient(3, [0.0, 0.0, 0.0])

    def test_batched(self):
        x = np.array([[1.0, 0.0], [2.0, 0.0]])
        out = poisson_kernel(2, x)
        assert out.shape == (2,)
        assert out[1] == pytest.approx(math.log(2.0) / (2 * math.pi))


class TestPoissonGradient:
    def test_d1_indicator(self):
        assert poisson_gradient(1, -1.0)[0] == 0.0
        assert poisson_gradient(1, 0.5)[0] == 1.0

    def test_d2(self):
        g = poisson_gradient(2, [1.0, 0.0])
        assert g == pytest.approx([1.0 / (2 * math.pi), 0.0])

    def test_d3(self):
        g = poisson_gradient(3, [2.0, 0.0, 0.0])
        assert g == pytest.approx([1.0 / (16 * math.pi), 0.0, 0.0])

    @pytest.mark.parametrize("d", [2, 3, 5])
    def test_matches_finite_differences(self, d):
        rng = np.random.default_rng(7)
        h = 1e-6
        for _ in range(20):
            x = rng.normal(size=d)
            x *= max(0.2, np.linalg.norm(x)) / np.linalg.norm(x)
            g = poisson_gradient(d, x)
            for i in range(d):
                e = np.zeros(d)
                e[i] = h
                fd = (poisson_kernel(d, x + e) - poisson_kernel(d, x - e)) / (2 * h)
                assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    @pytest.mark.parametrize("d", [2, 3])
    def test_fundamental_solution_normalization(self, d):
        # the flux of grad Q_d through a sphere of radius r is 1
        rng = np.random.default_rng(3)
        n = 200_000
        v = rng.normal(size=(n, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = 0.7
        flux = np.mean(np.einsum("bi,bi->b", poisson_gradient(d, r * v), v)) * sphere_area(d) * r ** (d - 1)
        assert flux == pytest.approx(1.0, rel=0.01)


class TestGaussianDensity:
    def test_standard_1d(self):
        spec = GaussianSpec(dim=1, mean=[0.0], covariance=[[1.0]])
        assert gaussian_density(spec, [0.0]) == pytest.approx((2 * math.pi) ** -0.5)

    def test_standard_2d(self):
        spec = GaussianSpec(dim=2, mean=np.zeros(2), covariance=np.eye(2))
        assert gaussian_density(spec, np.zeros(2)) == pytest.approx(1 / (2 * math.pi))

    def test_decay_along_ray(self):
        spec = GaussianSpec(dim=2, mean=np.zeros(2), covariance=[[2.0, 0.3], [0.3, 1.0]])
        r = np.linspace(0, 8, 30)
        vals = gaussian_density(spec, np.outer(r, [1.0, 0.5]))
        assert np.all(np.diff(vals) < 0)

    def test_singular_covariance_rejected(self):
        spec = GaussianSpec(dim=2, mean=np.zeros(2), covariance=[[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SingularCovarianceError):
            gaussian_density(spec, np.zeros(2))

    @pytest.mark.parametrize("d", [1, 2])
    def test_integrates_to_one(self, d):
        spec = GaussianSpec(dim=d, mean=np.zeros(d), covariance=np.eye(d) * 1.3)
        s = math.sqrt(1.3)
        pts = np.linspace(-6 * s, 6 * s, 801)
        h = pts[1] - pts[0]
        if d == 1:
            total = np.sum(gaussian_density(spec, pts[:, None])) * h
        else:
            xx, yy = np.meshgrid(pts, pts)
            grid = np.stack([xx.ravel(), yy.ravel()], axis=-1)
            total = np.sum(gaussian_density(spec, grid)) * h**2
        assert total == pytest.approx(1.0, abs=1e-4)


class TestLocalizer:
    def test_branches(self):
        assert localizer(0.125, 1 / 16) == 1.0
        assert localizer(1.0, 1.5) == pytest.approx(math.exp(-1.0))
        assert localizer(1.0, 2.0) == 0.0
        assert localizer(1.0, 5.0) == 0.0

    def test_continuity_mesh_scan(self):
        for a in (0.125, 1.0):
            x = np.linspace(0, 3 * a, int(3 / 1e-4) + 1)
            vals = localizer(a, x)
            assert np.max(np.abs(np.diff(vals))) < 5e-3
            assert np.all((vals >= 0) & (vals <= 1))

    def test_log_deriv_values(self):
        assert localizer_log_deriv(1.0, 0.5) == 0.0
        assert localizer_log_deriv(1.0, 1.5) == pytest.approx(-4.0)
        assert localizer_log_deriv(0.125, 3 / 16) == pytest.approx(-(0.125) / (1 / 16) ** 2)
        assert localizer_log_deriv(1.0, 1.0) == pytest.approx(-1.0)  # right-hand branch at the kink

    def test_log_deriv_matches_brute_force(self):
        a = 0.125
        h = 1e-7
        for x in (0.14, 0.17, 0.2, 0.23):
            fd = (math.log(localizer(a, x + h)) - math.log(localizer(a, x - h))) / (2 * h)
            assert localizer_log_deriv(a, x) == pytest.approx(fd, rel=1e-5)

    def test_log_deriv_rejects_vanishing_region(self):
        with pytest.raises(ValueError):
            localizer_log_deriv(1.0, 2.0)


class TestCpBound:
    def test_values(self):
        # e a^{-p} (2p)^{2p} e^{-2p}
        assert c_p_bound(1.0, 1.0) == pytest.approx(4.0 / math.e)
        assert c_p_bound(0.5, 1.0) == pytest.approx(8.0 / math.e)
        assert c_p_bound(1.0, 2.0) == pytest.approx(256.0 / math.e**3)

    def test_scales_like_a_to_minus_p(self):
        assert c_p_bound(0.5, 2.0) == pytest.approx(4.0 * c_p_bound(1.0, 2.0))

    def test_sharpness(self):
        # the sup is attained on the decay branch; the bound is tight within 1%
        a, p = 1.0, 2.0
        x = np.linspace(a, 2 * a * (1 - 1e-9), 2_000_001)
        vals = np.abs(localizer_log_deriv(a, x)) ** p * localizer(a, x)
        assert np.max(vals) == pytest.approx(c_p_bound(a, p), rel=1e-2)

    @pytest.mark.parametrize("a", [0.125, 1.0])
    @pytest.mark.parametrize("p", [1.0, 2.0, 4.0])
    def test_dominates_mesh_scan(self, a, p):
        x = np.linspace(0, 2 * a * (1 - 1e-9), 200_001)
        vals = np.abs(localizer_log_deriv(a, x)) ** p * localizer(a, x)
        assert np.max(vals) <= c_p_bound(a, p) * (1 + 1e-9)
