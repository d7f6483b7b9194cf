"""Tests for dynamic time warping, template building, and the classifiers.

The DTW oracle enumerates every admissible path recursively on short
sequences; with integer-valued inputs every partial sum is exact in binary
floating point, so the dynamic program must match the enumeration exactly.
"""

import numpy as np
import pytest

import warpmix as wm
from warpmix.classify import (
    ASYMMETRIC,
    SAKOE_CHIBA,
    SYMMETRIC,
    CvPlan,
    StepPattern,
    classify,
    cross_validate,
    dtw_align,
    dtw_template,
    resample_to_grid,
    train_classifier,
)
from warpmix.errors import ConfigError, DataError


def brute_force_dtw(x, y, pattern):
    """Minimal cumulative cost over all admissible paths, by recursion."""
    n, m = len(x), len(y)
    cost = (np.asarray(x, float)[:, None] - np.asarray(y, float)[None, :]) ** 2
    best = [np.inf]

    def walk(i, j, acc):
        if acc >= best[0]:
            return
        if (i, j) == (n - 1, m - 1):
            best[0] = min(best[0], acc)
            return
        for (di, dj), cells in pattern.moves:
            ni, nj = i + di, j + dj
            if ni >= n or nj >= m:
                continue
            extra = sum(w * cost[ni - ri, nj - rj] for ri, rj, w in cells)
            walk(ni, nj, acc + extra)

    walk(0, 0, cost[0, 0])
    return best[0]


class TestDtwAlign:
    def test_identical_inputs(self):
        x = np.array([0.0, 2.0, 1.0, 3.0])
        for pattern in (SYMMETRIC, ASYMMETRIC, SAKOE_CHIBA):
            res = dtw_align(x, x, pattern)
            assert res.distance == 0.0
            np.testing.assert_array_equal(res.path, np.stack([np.arange(4)] * 2, axis=1))

    def test_exact_stretch_match(self):
        res = dtw_align(np.array([0.0, 1.0]), np.array([0.0, 0.0, 1.0]), SYMMETRIC)
        assert res.distance == 0.0
        np.testing.assert_array_equal(res.path, [[0, 0], [0, 1], [1, 2]])

    @pytest.mark.parametrize("pattern", [SYMMETRIC, ASYMMETRIC, SAKOE_CHIBA])
    def test_matches_brute_force(self, pattern):
        rng = np.random.default_rng(31)
        checked = 0
        while checked < 60:
            n = int(rng.integers(2, 7))
            m = int(rng.integers(2, 7))
            x = rng.integers(0, 5, n).astype(float)
            y = rng.integers(0, 5, m).astype(float)
            oracle = brute_force_dtw(x, y, pattern)
            if not np.isfinite(oracle):
                with pytest.raises(DataError):
                    dtw_align(x, y, pattern)
                continue
            assert dtw_align(x, y, pattern).distance == oracle
            checked += 1

    def test_symmetric_pattern_is_symmetric(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.integers(0, 9, rng.integers(2, 10)).astype(float)
            y = rng.integers(0, 9, rng.integers(2, 10)).astype(float)
            assert (
                dtw_align(x, y, SYMMETRIC).distance
                == dtw_align(y, x, SYMMETRIC).distance
            )

    def test_shift_invariance(self):
        rng = np.random.default_rng(6)
        for pattern in (SYMMETRIC, ASYMMETRIC, SAKOE_CHIBA):
            x = rng.integers(0, 9, 6).astype(float)
            y = rng.integers(0, 9, 7).astype(float)
            assert (
                dtw_align(x + 7.0, y + 7.0, pattern).distance
                == dtw_align(x, y, pattern).distance
            )

    def test_path_is_monotone_and_spans(self):
        rng = np.random.default_rng(7)
        for pattern in (SYMMETRIC, ASYMMETRIC, SAKOE_CHIBA):
            x = rng.normal(size=9)
            y = rng.normal(size=11)
            path = dtw_align(x, y, pattern).path
            assert tuple(path[0]) == (0, 0)
            assert tuple(path[-1]) == (8, 10)
            diffs = np.diff(path, axis=0)
            assert np.all(diffs >= 0)
            assert np.all(diffs.sum(axis=1) >= 1)

    def test_asymmetric_visits_every_query_index(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=8)
        y = rng.normal(size=10)
        path = dtw_align(x, y, ASYMMETRIC).path
        np.testing.assert_array_equal(np.unique(path[:, 0]), np.arange(8))

    def test_infeasible_endpoints(self):
        with pytest.raises(DataError):
            dtw_align(np.zeros(2), np.zeros(9), ASYMMETRIC)  # slope above 2
        with pytest.raises(DataError):
            dtw_align(np.zeros(9), np.zeros(3), SAKOE_CHIBA)  # slope below 1/2

    def test_normalization(self):
        x = np.array([0.0, 1.0, 2.0, 1.0])
        y = np.array([0.0, 1.0, 1.0, 2.0, 1.0])
        res_sym = dtw_align(x, y, SYMMETRIC)
        assert res_sym.normalized == pytest.approx(res_sym.distance / len(res_sym.path))
        res_asym = dtw_align(x, y, ASYMMETRIC)
        assert res_asym.normalized == pytest.approx(res_asym.distance / 5)

    def test_named_lookup(self):
        assert StepPattern.named("Symmetric") == SYMMETRIC
        with pytest.raises(ValueError):
            StepPattern.named("diagonal")

    def test_too_short(self):
        with pytest.raises(ValueError):
            dtw_align(np.array([1.0]), np.array([1.0, 2.0]))


def _sample(values, times=None, participant="p", repetition=1):
    values = np.asarray(values, float)
    if times is None:
        times = np.linspace(0.0, 1.0, values.size)
    return wm.FunctionalSample(
        times=times, values=values, condition="a",
        participant=participant, repetition=repetition,
    )


def _bump(t, center, width=0.08):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


class TestDtwTemplate:
    def test_single_sample_is_spline_smooth(self):
        rng = np.random.default_rng(9)
        t = np.linspace(0.0, 1.0, 60)
        s = _sample(np.sin(2 * np.pi * t) + rng.normal(0, 0.02, 60), times=t)
        template = dtw_template([s], spline_df=9)
        basis = wm.SplineBasis(9)
        grid = np.linspace(0.0, 1.0, 100)
        curve = resample_to_grid(s)
        coef, *_ = np.linalg.lstsq(basis.design_matrix(grid), curve, rcond=None)
        direct = basis.design_matrix(grid) @ coef
        np.testing.assert_allclose(template.values, direct, atol=0.02)

    def test_duplicated_sample_changes_nothing(self):
        rng = np.random.default_rng(10)
        t = np.linspace(0.0, 1.0, 50)
        s = _sample(np.cos(3 * t) + rng.normal(0, 0.01, 50), times=t)
        one = dtw_template([s], spline_df=8)
        two = dtw_template([s, s], spline_df=8)
        np.testing.assert_allclose(two.values, one.values, atol=1e-9)

    def test_template_bumps_between_sample_bumps(self):
        t = np.linspace(0.0, 1.0, 120)
        early = _sample(_bump(t, 0.35) + _bump(t, 0.7), times=t, repetition=1)
        late = _sample(_bump(t, 0.45) + _bump(t, 0.8), times=t, repetition=2)
        template = dtw_template([early, late], spline_df=14)
        first_half = template.values[template.grid < 0.6]
        peak1 = template.grid[np.argmax(first_half)]
        second_half_mask = template.grid >= 0.6
        peak2 = template.grid[second_half_mask][np.argmax(template.values[second_half_mask])]
        assert 0.35 <= peak1 <= 0.45
        assert 0.7 <= peak2 <= 0.8

    def test_needs_samples(self):
        with pytest.raises(ValueError):
            dtw_template([], spline_df=8)


def _classification_dataset(seed=0, n_reps=6, noise=0.01, n_points=40):
    # Three participants with well-separated shapes plus mild random warps.
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n_points)
    shapes = [
        lambda s: np.sin(2 * np.pi * s),
        lambda s: np.sin(2 * np.pi * s) ** 2,
        lambda s: 1.0 - 2.0 * np.abs(s - 0.5),
    ]
    samples = []
    for p, shape in enumerate(shapes):
        for j in range(1, n_reps + 1):
            shift = rng.normal(0.0, 0.03)
            u = np.clip(t + shift * np.sin(np.pi * t), 0.0, 1.0)
            samples.append(_sample(
                shape(u) + rng.normal(0.0, noise, t.size),
                times=t, participant=f"p{p}", repetition=j,
            ))
    return wm.ConditionDataset(samples)


class TestClassify:
    @pytest.mark.parametrize("method,params", [
        ("np", None),
        ("dtw", {"spline_df": 10}),
        ("tms", {"n_basis": 8, "outer_iterations": 1, "inner_iterations": 2}),
    ])
    def test_memorization_and_separated_classes(self, method, params):
        ds = _classification_dataset()
        trained = train_classifier(ds, method, params)
        result = classify(ds.samples, trained)
        assert result.accuracy == 1.0
        assert result.predictions[0] == ds.samples[0].participant

    def test_training_order_invariance(self):
        ds = _classification_dataset(seed=3)
        reversed_ds = wm.ConditionDataset(tuple(reversed(ds.samples)))
        for method, params in (("np", None), ("dtw", {"spline_df": 9})):
            a = classify(ds.samples, train_classifier(ds, method, params))
            b = classify(ds.samples, train_classifier(reversed_ds, method, params))
            assert a.predictions == b.predictions

    def test_confusion_counts(self):
        ds = _classification_dataset(seed=4)
        trained = train_classifier(ds, "np")
        result = classify(ds.samples, trained)
        total = sum(sum(row.values()) for row in result.confusion.values())
        assert total == len(ds.samples)
        assert result.confusion["p0"]["p0"] == 6

    def test_ties_break_to_lowest_participant(self):
        # Identical training curves for every participant: every test curve
        # ties, so predictions are constantly the first participant and the
        # accuracy on a balanced set is exactly the chance level.
        t = np.linspace(0.0, 1.0, 30)
        shape = np.sin(2 * np.pi * t)
        train = [
            _sample(shape, times=t, participant=p, repetition=r)
            for p in ("a", "b", "c") for r in (1, 2)
        ]
        trained = train_classifier(wm.ConditionDataset(tuple(train)), "np")
        result = classify(train, trained)
        assert set(result.predictions) == {"a"}
        assert result.accuracy == pytest.approx(1.0 / 3.0)

    def test_unknown_method(self):
        ds = _classification_dataset(seed=5)
        with pytest.raises(ConfigError):
            train_classifier(ds, "forest")

    def test_empty_test_set(self):
        ds = _classification_dataset(seed=6)
        trained = train_classifier(ds, "np")
        with pytest.raises(DataError):
            classify([], trained)


class TestCrossValidation:
    def test_fold_assignment_ten_reps(self):
        t = np.linspace(0.0, 1.0, 5)
        samples = [
            _sample(np.arange(5.0) + r, times=t, participant=p, repetition=r)
            for p in ("a", "b") for r in range(1, 11)
        ]
        plan = CvPlan(folds=5)
        folds = plan.assignments(wm.ConditionDataset(tuple(samples)))
        for f, fold in enumerate(folds):
            expected = {2 * f + 1, 2 * f + 2}
            assert {r for _, r in fold} == expected
            assert {p for p, _ in fold} == {"a", "b"}

    def test_singleton_grid(self):
        ds = _classification_dataset(seed=7, n_reps=6)
        result = cross_validate(ds, "np", [{}], plan=CvPlan(folds=3))
        assert result.best_params == {}
        assert len(result.fold_accuracies) == 3
        assert result.best_accuracy == pytest.approx(
            float(np.mean(result.fold_accuracies))
        )

    def test_grid_order_breaks_ties(self):
        ds = _classification_dataset(seed=8, n_reps=6)
        grid = [{"spline_df": 10}, {"spline_df": 11}]
        result = cross_validate(ds, "dtw", grid, plan=CvPlan(folds=3))
        if result.fold_accuracies == (1.0, 1.0, 1.0):
            assert result.best_params == grid[0]

    def test_records_cover_grid_and_folds(self):
        ds = _classification_dataset(seed=9, n_reps=6)
        grid = [{"spline_df": 8}, {"spline_df": 12}]
        result = cross_validate(ds, "dtw", grid, plan=CvPlan(folds=3))
        assert len(result.records) == 6
        assert {rec.fold for rec in result.records} == {1, 2, 3}

    def test_csv_layout(self):
        ds = _classification_dataset(seed=10, n_reps=6)
        result = cross_validate(ds, "dtw", [{"spline_df": 9}], plan=CvPlan(folds=3))
        lines = result.to_csv().strip().splitlines()
        assert lines[0] == "method,param_json,fold,accuracy"
        # param_json contains commas only when quoted, so the header width
        # must match every row when parsed by the csv module
        import csv as _csv
        import io as _io
        rows = list(_csv.reader(_io.StringIO(result.to_csv())))
        assert all(len(r) == 4 for r in rows)
        assert rows[1][0] == "dtw"

    def test_empty_grid_rejected(self):
        ds = _classification_dataset(seed=11)
        with pytest.raises(ConfigError):
            cross_validate(ds, "np", [])

    def test_too_few_repetitions(self):
        ds = _classification_dataset(seed=12, n_reps=3)
        with pytest.raises(DataError):
            cross_validate(ds, "np", [{}], plan=CvPlan(folds=5))
