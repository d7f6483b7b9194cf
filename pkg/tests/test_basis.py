"""Tests for the clamped cubic spline basis.

The Cox-de Boor recursion is implemented from scratch, so
scipy.interpolate.BSpline is the independent oracle: evaluating the same
knot vector and random coefficients through both must agree everywhere on
[0, 1], including the right endpoint.
"""

import numpy as np
import pytest
from scipy.interpolate import BSpline

from warpmix.basis import SplineBasis


def _oracle_design(basis: SplineBasis, times: np.ndarray) -> np.ndarray:
    cols = []
    family = len(basis.knots) - basis.degree - 1
    for k in range(family):
        coef = np.zeros(family)
        coef[k] = 1.0
        spl = BSpline(basis.knots, coef, basis.degree, extrapolate=False)
        cols.append(np.nan_to_num(spl(times)))
    full = np.column_stack(cols)
    # scipy leaves the right-closed endpoint to the caller
    full[times == 1.0, -1] = 1.0
    if not basis.intercept:
        return full[:, 1:]
    return full


class TestDesignMatrix:
    @pytest.mark.parametrize("n_basis", [4, 7, 12, 23])
    def test_against_scipy(self, n_basis):
        basis = SplineBasis(n_basis)
        times = np.linspace(0.0, 1.0, 257)
        np.testing.assert_allclose(
            basis.design_matrix(times), _oracle_design(basis, times), atol=1e-12
        )

    def test_against_scipy_random_points(self):
        rng = np.random.default_rng(42)
        basis = SplineBasis(9)
        times = np.sort(rng.uniform(0.0, 1.0, 300))
        np.testing.assert_allclose(
            basis.design_matrix(times), _oracle_design(basis, times), atol=1e-12
        )

    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    def test_lower_degrees(self, degree):
        basis = SplineBasis(degree + 3, degree=degree)
        times = np.linspace(0.0, 1.0, 101)
        np.testing.assert_allclose(
            basis.design_matrix(times), _oracle_design(basis, times), atol=1e-12
        )

    def test_partition_of_unity(self):
        rng = np.random.default_rng(1)
        basis = SplineBasis(11)
        times = rng.uniform(0.0, 1.0, 500)
        sums = basis.design_matrix(times).sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_nonnegative(self):
        basis = SplineBasis(8)
        times = np.linspace(0.0, 1.0, 501)
        assert np.all(basis.design_matrix(times) >= -1e-15)

    def test_endpoint_values(self):
        # Clamped basis: first function is 1 at t=0, last is 1 at t=1.
        basis = SplineBasis(10)
        row0 = basis.design_matrix(np.array([0.0]))[0]
        row1 = basis.design_matrix(np.array([1.0]))[0]
        assert row0[0] == pytest.approx(1.0)
        np.testing.assert_allclose(row0[1:], 0.0, atol=1e-15)
        assert row1[-1] == pytest.approx(1.0)
        np.testing.assert_allclose(row1[:-1], 0.0, atol=1e-15)

    def test_linear_precision_at_greville(self):
        # Coefficients at the Greville points reproduce the identity map.
        basis = SplineBasis(13)
        coef = basis.greville_points()
        times = np.linspace(0.0, 1.0, 400)
        np.testing.assert_allclose(basis.design_matrix(times) @ coef, times, atol=1e-12)

    def test_no_intercept_drops_first_column(self):
        with_i = SplineBasis(7, intercept=True)
        without = SplineBasis(6, intercept=False)
        times = np.linspace(0.0, 1.0, 50)
        full = with_i.design_matrix(times)
        np.testing.assert_allclose(without.design_matrix(times), full[:, 1:], atol=1e-15)

    def test_domain_check(self):
        basis = SplineBasis(6)
        with pytest.raises(ValueError):
            basis.design_matrix(np.array([-0.01]))
        with pytest.raises(ValueError):
            basis.design_matrix(np.array([1.01]))

    def test_too_few_basis_functions(self):
        with pytest.raises(ValueError):
            SplineBasis(3)  # cubic with intercept needs at least 4
        with pytest.raises(ValueError):
            SplineBasis(2, intercept=False)  # one fewer without intercept


class TestDerivativeMatrix:
    def test_against_scipy_derivative(self):
        rng = np.random.default_rng(7)
        basis = SplineBasis(10)
        coef = rng.normal(size=basis.n_basis)
        spl = BSpline(basis.knots, coef, basis.degree)
        times = np.linspace(0.001, 0.999, 211)
        ours = basis.derivative_matrix(times) @ coef
        np.testing.assert_allclose(ours, spl.derivative()(times), atol=1e-10)

    def test_against_finite_differences(self):
        basis = SplineBasis(9)
        rng = np.random.default_rng(5)
        coef = rng.normal(size=basis.n_basis)
        t = np.linspace(0.01, 0.99, 97)
        h = 1e-6
        fd = (
            basis.design_matrix(t + h) @ coef - basis.design_matrix(t - h) @ coef
        ) / (2 * h)
        np.testing.assert_allclose(basis.derivative_matrix(t) @ coef, fd, atol=1e-5)

    def test_derivative_rows_sum_to_zero(self):
        # d/dt of the partition of unity
        basis = SplineBasis(12)
        times = np.linspace(0.0, 1.0, 301)
        np.testing.assert_allclose(
            basis.derivative_matrix(times).sum(axis=1), 0.0, atol=1e-10
        )


class TestGrevillePoints:
    def test_count_and_range(self):
        basis = SplineBasis(15)
        g = basis.greville_points()
        assert g.shape == (15,)
        assert g[0] == 0.0 and g[-1] == 1.0
        assert np.all(np.diff(g) > 0)
