"""Tests for covariance kernels and the guarded Cholesky factor.

The Matern correlation ships its own half-integer closed forms; the general
Bessel route (scipy.special.kv) acts as the oracle at half-integer orders,
and textbook formulas pin the three standard cases.
"""

import numpy as np
import pytest
import scipy.special

from warpmix.errors import NumericsError
from warpmix.kernels import (
    BridgeKernel,
    MaternKernel,
    MotionKernel,
    SpdFactor,
    build_cov,
    kernel_eval,
    logdet,
    matern_correlation,
    weighted_norm,
)


def _bessel_route(distance, inv_range, smoothness):
    x = np.asarray(distance, dtype=float) * inv_range
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = (
        2.0 ** (1.0 - smoothness)
        / scipy.special.gamma(smoothness)
        * xp**smoothness
        * scipy.special.kv(smoothness, xp)
    )
    return out


class TestMaternCorrelation:
    def test_closed_form_half(self):
        # smoothness 1/2 is the exponential kernel
        d = np.linspace(0.0, 3.0, 50)
        np.testing.assert_allclose(
            matern_correlation(d, 2.0, 0.5), np.exp(-2.0 * d), atol=1e-12
        )

    def test_closed_form_three_halves(self):
        d = np.linspace(0.0, 3.0, 50)
        x = np.sqrt(3.0) * d
        expected = (1.0 + x) * np.exp(-x)
        np.testing.assert_allclose(
            matern_correlation(d, np.sqrt(3.0), 1.5), expected, atol=1e-12
        )

    def test_closed_form_five_halves(self):
        d = np.linspace(0.0, 3.0, 50)
        x = 1.7 * d
        expected = (1.0 + x + x**2 / 3.0) * np.exp(-x)
        np.testing.assert_allclose(
            matern_correlation(d, 1.7, 2.5), expected, atol=1e-12
        )

    @pytest.mark.parametrize("smoothness", [0.5, 1.5, 2.5, 3.5, 6.5])
    def test_half_integer_matches_bessel(self, smoothness):
        d = np.linspace(0.0, 2.0, 40)
        np.testing.assert_allclose(
            matern_correlation(d, 3.0, smoothness),
            _bessel_route(d, 3.0, smoothness),
            atol=1e-10,
        )

    def test_general_order(self):
        d = np.linspace(0.0, 2.0, 40)
        np.testing.assert_allclose(
            matern_correlation(d, 3.0, 1.8), _bessel_route(d, 3.0, 1.8), atol=1e-10
        )

    def test_zero_distance_is_one(self):
        for mu in (0.5, 1.2, 2.5, 6.2):
            assert matern_correlation(np.array([0.0]), 5.0, mu)[0] == 1.0

    def test_bounded_by_one(self):
        rng = np.random.default_rng(2)
        d = rng.uniform(0.0, 5.0, 200)
        for mu in (0.7, 1.5, 6.2, 12.0):
            r = matern_correlation(d, 10.0, mu)
            assert np.all(r <= 1.0) and np.all(r >= 0.0)


class TestKernelMatrices:
    def test_bridge_values(self):
        k = BridgeKernel(scale=2.0)
        assert kernel_eval(k, 0.3, 0.6) == pytest.approx(2.0 * (0.3 - 0.18))
        assert kernel_eval(k, 0.0, 0.5) == 0.0
        assert kernel_eval(k, 1.0, 0.5) == 0.0

    def test_motion_values(self):
        k = MotionKernel(scale=3.0)
        assert kernel_eval(k, 0.2, 0.7) == pytest.approx(0.6)
        assert kernel_eval(k, 0.0, 0.7) == 0.0

    def test_scale_is_linear(self):
        times = np.linspace(0.1, 0.9, 7)
        for base, scaled in [
            (BridgeKernel(1.0), BridgeKernel(5.0)),
            (MotionKernel(1.0), MotionKernel(5.0)),
            (MaternKernel(1.0, 4.0, 1.5), MaternKernel(5.0, 4.0, 1.5)),
        ]:
            np.testing.assert_allclose(
                build_cov(scaled, times), 5.0 * build_cov(base, times), atol=0
            )

    def test_matrices_are_psd(self):
        times = np.linspace(0.05, 0.95, 12)
        for k in (BridgeKernel(1.3), MotionKernel(0.7), MaternKernel(2.0, 8.0, 2.2)):
            eig = np.linalg.eigvalsh(build_cov(k, times))
            assert eig.min() > -1e-10

    def test_bridge_interior_matrix_invertible(self):
        times = np.linspace(0.2, 0.8, 4)
        mat = build_cov(BridgeKernel(1.0), times)
        assert np.linalg.eigvalsh(mat).min() > 0

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            MaternKernel(scale=-1.0, inv_range=1.0, smoothness=1.5)
        with pytest.raises(ValueError):
            MaternKernel(scale=1.0, inv_range=0.0, smoothness=1.5)
        with pytest.raises(ValueError):
            BridgeKernel(scale=0.0)
        with pytest.raises(ValueError):
            MotionKernel(scale=-2.0)


class TestSpdFactor:
    def _random_spd(self, rng, n):
        a = rng.normal(size=(n, n))
        return a @ a.T + n * np.eye(n)

    def test_solve_matches_dense_inverse(self):
        rng = np.random.default_rng(6)
        mat = self._random_spd(rng, 8)
        fac = SpdFactor(mat)
        b = rng.normal(size=(8, 3))
        np.testing.assert_allclose(fac.solve(b), np.linalg.solve(mat, b), atol=1e-10)

    def test_logdet_matches_slogdet(self):
        rng = np.random.default_rng(8)
        mat = self._random_spd(rng, 6)
        assert SpdFactor(mat).logdet() == pytest.approx(
            np.linalg.slogdet(mat)[1], abs=1e-10
        )

    def test_quad_form(self):
        rng = np.random.default_rng(9)
        mat = self._random_spd(rng, 5)
        z = rng.normal(size=5)
        assert SpdFactor(mat).quad_form(z) == pytest.approx(
            float(z @ np.linalg.solve(mat, z)), rel=1e-10
        )

    def test_half_solve(self):
        rng = np.random.default_rng(10)
        mat = self._random_spd(rng, 5)
        fac = SpdFactor(mat)
        z = rng.normal(size=5)
        u = fac.half_solve(z)
        assert float(u @ u) == pytest.approx(fac.quad_form(z), rel=1e-12)

    def test_jitter_rescues_semidefinite(self):
        # Rank-deficient PSD matrix: plain Cholesky fails, jitter succeeds.
        v = np.array([1.0, 2.0, 3.0])
        mat = np.outer(v, v)
        fac = SpdFactor(mat)
        assert fac.jitter > 0
        sol = fac.solve(np.eye(3))
        assert np.all(np.isfinite(sol))

    def test_indefinite_raises(self):
        mat = np.diag([1.0, -5.0, 2.0])
        with pytest.raises(NumericsError):
            SpdFactor(mat)

    def test_free_functions(self):
        rng = np.random.default_rng(12)
        mat = self._random_spd(rng, 4)
        z = rng.normal(size=4)
        assert weighted_norm(mat, z) == pytest.approx(
            float(z @ np.linalg.solve(mat, z)), rel=1e-10
        )
        assert logdet(mat) == pytest.approx(np.linalg.slogdet(mat)[1], abs=1e-10)
