"""Tests for warp evaluation, its anchor Jacobian, and the monotone projection.

The isotonic projection is verified against a quadratic-programming oracle
(scipy SLSQP on the same constrained least-squares problem).
"""

import numpy as np
import pytest
import scipy.optimize

from warpmix.warps import (
    WarpConfig,
    enforce_homeomorphism,
    eval_warp,
    warp_jacobian,
    _isotonic_projection,
)


class TestWarpConfig:
    def test_anchor_layout(self):
        cfg = WarpConfig(3)
        np.testing.assert_allclose(cfg.anchors, [0.25, 0.5, 0.75])
        np.testing.assert_allclose(cfg.identity_values, [0.25, 0.5, 0.75])
        np.testing.assert_allclose(cfg.nodes(), [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_validation(self):
        with pytest.raises(ValueError):
            WarpConfig(0)
        with pytest.raises(ValueError):
            WarpConfig(2, interpolation="quintic")
        with pytest.raises(ValueError):
            WarpConfig(2, min_gap=0.5)  # gap too wide for 2 anchors


class TestEvalWarp:
    def test_identity(self):
        cfg = WarpConfig(2)
        t = np.linspace(0.0, 1.0, 17)
        np.testing.assert_allclose(eval_warp(cfg, cfg.identity_values, None, t), t)

    def test_endpoints_fixed(self):
        rng = np.random.default_rng(0)
        for interp in ("linear", "cubic"):
            cfg = WarpConfig(3, interpolation=interp)
            vals = np.sort(rng.uniform(0.1, 0.9, 3))
            out = eval_warp(cfg, vals, None, np.array([0.0, 1.0]))
            np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-14)

    def test_random_part_adds(self):
        cfg = WarpConfig(2)
        t = np.linspace(0.0, 1.0, 9)
        fixed = np.array([0.3, 0.6])
        rand = np.array([0.02, -0.03])
        both = eval_warp(cfg, fixed, rand, t)
        merged = eval_warp(cfg, fixed + rand, None, t)
        np.testing.assert_allclose(both, merged)

    def test_linear_interpolates_anchors(self):
        cfg = WarpConfig(2)
        vals = np.array([0.2, 0.7])
        out = eval_warp(cfg, vals, None, cfg.anchors)
        np.testing.assert_allclose(out, vals)

    def test_cubic_passes_through_anchors(self):
        cfg = WarpConfig(3, interpolation="cubic")
        vals = np.array([0.2, 0.45, 0.8])
        out = eval_warp(cfg, vals, None, cfg.anchors)
        np.testing.assert_allclose(out, vals, atol=1e-12)

    def test_no_clamping_during_evaluation(self):
        # Optimizers may propose non-monotone anchors;
        # evaluation must pass the values through untouched.
        cfg = WarpConfig(2)
        vals = np.array([0.9, 0.1])
        out = eval_warp(cfg, vals, None, cfg.anchors)
        np.testing.assert_allclose(out, vals)


class TestWarpJacobian:
    @pytest.mark.parametrize("interp", ["linear", "cubic"])
    def test_matches_finite_differences(self, interp):
        cfg = WarpConfig(3, interpolation=interp)
        rng = np.random.default_rng(4)
        t = np.sort(rng.uniform(0.0, 1.0, 40))
        vals = np.array([0.2, 0.5, 0.8])
        jac = warp_jacobian(cfg, t)
        h = 1e-7
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd = (eval_warp(cfg, vals + e, None, t) - eval_warp(cfg, vals - e, None, t)) / (2 * h)
            np.testing.assert_allclose(jac[:, k], fd, atol=1e-6)

    def test_reconstructs_evaluation(self):
        # Warp is affine in the anchor values: base + jacobian @ values.
        cfg = WarpConfig(2)
        t = np.linspace(0.0, 1.0, 23)
        base = eval_warp(cfg, np.zeros(2), None, t)
        jac = warp_jacobian(cfg, t)
        rng = np.random.default_rng(3)
        for _ in range(5):
            vals = rng.uniform(0.0, 1.0, 2)
            np.testing.assert_allclose(
                base + jac @ vals, eval_warp(cfg, vals, None, t), atol=1e-12
            )

    def test_rows_at_endpoints_vanish(self):
        cfg = WarpConfig(3)
        jac = warp_jacobian(cfg, np.array([0.0, 1.0]))
        np.testing.assert_allclose(jac, 0.0, atol=1e-14)


def _qp_isotonic(z: np.ndarray) -> np.ndarray:
    # Nearest nondecreasing sequence in least squares, via SLSQP.
    n = z.size
    cons = [
        {"type": "ineq", "fun": (lambda x, i=i: x[i + 1] - x[i])} for i in range(n - 1)
    ]
    res = scipy.optimize.minimize(
        lambda x: np.sum((x - z) ** 2), z, constraints=cons, method="SLSQP",
        options={"maxiter": 500, "ftol": 1e-14},
    )
    return res.x


class TestIsotonicProjection:
    def test_already_sorted_unchanged(self):
        z = np.array([0.1, 0.4, 0.9])
        np.testing.assert_allclose(_isotonic_projection(z), z)

    def test_matches_qp_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            z = rng.normal(size=rng.integers(2, 9))
            np.testing.assert_allclose(
                _isotonic_projection(z), _qp_isotonic(z), atol=1e-6
            )

    def test_pool_adjacent_means(self):
        z = np.array([2.0, 1.0])
        np.testing.assert_allclose(_isotonic_projection(z), [1.5, 1.5])


class TestEnforceHomeomorphism:
    def test_valid_warp_untouched(self):
        cfg = WarpConfig(2)
        fixed = np.array([0.3, 0.6])
        out, rand, changed = enforce_homeomorphism(cfg, fixed)
        assert not changed
        np.testing.assert_allclose(out, fixed)
        assert rand is None

    def test_output_strictly_increasing_with_endpoints(self):
        cfg = WarpConfig(3, min_gap=1e-4)
        rng = np.random.default_rng(21)
        for _ in range(50):
            fixed = rng.uniform(-0.3, 1.3, 3)
            out, _, _ = enforce_homeomorphism(cfg, fixed)
            full = np.concatenate([[0.0], out, [1.0]])
            assert np.all(np.diff(full) >= cfg.min_gap - 1e-12)

    def test_random_part_folded_into_fixed(self):
        cfg = WarpConfig(2)
        fixed = np.array([0.7, 0.2])  # out of order
        rand = np.array([0.01, -0.02])
        out_fixed, out_rand, changed = enforce_homeomorphism(cfg, fixed, rand)
        assert changed
        np.testing.assert_allclose(out_rand, rand)  # random part untouched
        combined = out_fixed + out_rand
        full = np.concatenate([[0.0], combined, [1.0]])
        assert np.all(np.diff(full) >= cfg.min_gap - 1e-12)

    def test_idempotent(self):
        cfg = WarpConfig(3)
        rng = np.random.default_rng(23)
        for _ in range(20):
            fixed = rng.uniform(-0.2, 1.2, 3)
            once, _, _ = enforce_homeomorphism(cfg, fixed)
            twice, _, changed = enforce_homeomorphism(cfg, once)
            assert not changed
            np.testing.assert_allclose(twice, once, atol=1e-14)

    def test_projection_is_minimal_move(self):
        # Against the QP oracle on the shifted problem.
        cfg = WarpConfig(2, min_gap=1e-4)
        delta = cfg.min_gap
        rng = np.random.default_rng(29)
        for _ in range(20):
            fixed = rng.uniform(0.05, 0.95, 2)
            out, _, _ = enforce_homeomorphism(cfg, fixed)
            z = fixed - delta * np.arange(1, 3)
            oracle = np.clip(_qp_isotonic(z), 0.0, 1.0 - 3 * delta)
            oracle += delta * np.arange(1, 3)
            np.testing.assert_allclose(out, oracle, atol=1e-6)
