"""Participant identification from movement curves.

Three classifiers over a common evaluation grid:

* TMS: nearest participant by the minimized warp-posterior criterion of the
  fitted hierarchical model (:func:`warpmix.model.posterior_distance`);
* NP: nearest participant by the minimum pointwise L2 distance to any of
  that participant's training curves;
* DTW: nearest participant by L2 distance to a per-participant template
  built by iterated dynamic-time-warping alignment.

Plus the chronological k-fold cross-validation harness used to pick
hyperparameters.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .basis import SplineBasis
from .data import ConditionDataset, FunctionalSample
from .errors import ConfigError, DataError
from .kernels import BridgeKernel, MaternKernel
from .model import FittedModel, ModelSpec, fit, posterior_distance
from .warps import WarpConfig

EVAL_GRID_SIZE = 100


# ---------------------------------------------------------------------------
# Dynamic time warping

# A move is (di, dj, costs); costs are (ri, rj, weight) triples naming the
# cells, relative to the destination, whose pointwise costs the move pays.
_PLAIN = ((0, 0, 1.0),)

_MOVES = {
    # unconstrained: steps right, down, or diagonal
    "symmetric": (
        ((1, 0), _PLAIN),
        ((0, 1), _PLAIN),
        ((1, 1), _PLAIN),
    ),
    # every step advances the query index once; local slope in [0, 2]
    "asymmetric": (
        ((1, 0), _PLAIN),
        ((1, 1), _PLAIN),
        ((1, 2), _PLAIN),
    ),
    # slope-constrained variant: local slope in [1/2, 2], reached through
    # weighted composite steps
    "sakoe_chiba": (
        ((1, 1), _PLAIN),
        ((1, 2), ((0, 1, 0.5), (0, 0, 0.5))),
        ((2, 1), ((1, 0, 1.0), (0, 0, 1.0))),
    ),
}


@dataclass(frozen=True)
class StepPattern:
    """Local move set of the dynamic-programming recursion."""

    name: str
    moves: tuple = field(compare=False)

    @classmethod
    def named(cls, name: str) -> "StepPattern":
        key = name.lower()
        if key not in _MOVES:
            raise ValueError(
                f"unknown step pattern {name!r}; "
                f"expected one of {sorted(_MOVES)}"
            )
        return cls(name=key, moves=_MOVES[key])


SYMMETRIC = StepPattern.named("symmetric")
ASYMMETRIC = StepPattern.named("asymmetric")
SAKOE_CHIBA = StepPattern.named("sakoe_chiba")


@dataclass(frozen=True)
class DtwResult:
    """Optimal alignment: raw cumulative cost, length-normalized cost, and
    the 0-based warping path from (0, 0) to (n-1, m-1)."""

    distance: float
    normalized: float
    path: np.ndarray


def _shifted(row: np.ndarray, by: int) -> np.ndarray:
    if by == 0:
        return row
    out = np.full_like(row, np.inf)
    out[by:] = row[:-by]
    return out


# The fillers below compute the accumulated-cost table row by row, taking
# the argmin over move candidates in the same order the moves are listed so
# that tie-breaking matches a naive first-strict-minimum scan.


def _fill_symmetric(cost: np.ndarray):
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    move_id = np.full((n, m), -1, dtype=np.int8)
    acc[0] = np.cumsum(cost[0])
    move_id[0, 1:] = 1  # only (0,1) moves exist in the first row
    for i in range(1, n):
        upper = acc[i - 1]
        diag = _shifted(upper, 1)
        row = acc[i]
        ids = move_id[i]
        row[0] = upper[0] + cost[i, 0]
        ids[0] = 0
        # the (0,1) move reads the current row, so scan left to right
        ci = cost[i]
        for j in range(1, m):
            best, k = upper[j], 0
            left = row[j - 1]
            if left < best:
                best, k = left, 1
            if diag[j] < best:
                best, k = diag[j], 2
            row[j] = best + ci[j]
            ids[j] = k
    return acc, move_id


def _fill_asymmetric(cost: np.ndarray):
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    move_id = np.full((n, m), -1, dtype=np.int8)
    acc[0, 0] = cost[0, 0]
    for i in range(1, n):
        upper = acc[i - 1]
        cands = np.stack([upper, _shifted(upper, 1), _shifted(upper, 2)])
        k = np.argmin(cands, axis=0)
        cols = np.arange(m)
        acc[i] = cands[k, cols] + cost[i]
        move_id[i] = np.where(np.isfinite(acc[i]), k, -1)
    return acc, move_id


def _fill_sakoe_chiba(cost: np.ndarray):
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    move_id = np.full((n, m), -1, dtype=np.int8)
    acc[0, 0] = cost[0, 0]
    for i in range(1, n):
        upper = acc[i - 1]
        cands = np.stack([
            _shifted(upper, 1) + cost[i],
            _shifted(upper, 2) + 0.5 * _shifted(cost[i], 1) + 0.5 * cost[i],
            (_shifted(acc[i - 2], 1) + cost[i - 1] + cost[i])
            if i >= 2 else np.full(m, np.inf),
        ])
        k = np.argmin(cands, axis=0)
        cols = np.arange(m)
        acc[i] = cands[k, cols]
        move_id[i] = np.where(np.isfinite(acc[i]), k, -1)
    return acc, move_id


def dtw_align(x: np.ndarray, y: np.ndarray, pattern: StepPattern = SYMMETRIC) -> DtwResult:
    """Globally optimal warping of x onto y under the pattern's moves.

    The pointwise cost is the squared difference.  The raw distance is the
    exact optimal cumulative cost; the normalized distance divides by the
    path length for the symmetric pattern and by len(y) for the patterns
    that advance the query index every step.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.size < 2 or y.size < 2:
        raise ValueError("dtw_align needs two 1-D sequences of length >= 2")
    n, m = x.size, y.size
    cost = (x[:, None] - y[None, :]) ** 2
    fill = {"symmetric": _fill_symmetric, "asymmetric": _fill_asymmetric,
            "sakoe_chiba": _fill_sakoe_chiba}[pattern.name]
    acc, move_id = fill(cost)
    if not np.isfinite(acc[n - 1, m - 1]):
        raise DataError(
            f"no admissible warping path for lengths ({n}, {m}) under the "
            f"{pattern.name} step pattern"
        )
    # Backtrack, inserting the intermediate cells of composite moves.
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        (di, dj), cells = pattern.moves[move_id[i, j]]
        for ri, rj, _ in cells:
            if (ri, rj) != (0, 0):
                path.append((i - ri, j - rj))
        i, j = i - di, j - dj
        path.append((i, j))
    path.reverse()
    distance = float(acc[n - 1, m - 1])
    if pattern.name == "symmetric":
        normalized = distance / len(path)
    else:
        normalized = distance / m
    return DtwResult(distance=distance, normalized=normalized, path=np.array(path))


# ---------------------------------------------------------------------------
# Evaluation grid


def resample_to_grid(sample: FunctionalSample, size: int = EVAL_GRID_SIZE) -> np.ndarray:
    """Linear interpolation of a sample onto the common equidistant grid."""
    grid = np.linspace(0.0, 1.0, size)
    return np.interp(grid, sample.times, sample.values)


def _l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    grid = np.linspace(0.0, 1.0, a.size)
    return float(np.sqrt(np.trapezoid((a - b) ** 2, grid)))


# ---------------------------------------------------------------------------
# DTW template building


@dataclass(frozen=True)
class DtwTemplate:
    """Spline template from iterated alignment: values on the common grid
    plus the underlying coefficients."""

    grid: np.ndarray
    values: np.ndarray
    coefficients: np.ndarray
    spline_df: int


def _spline_fit(basis: SplineBasis, times: np.ndarray, values: np.ndarray) -> np.ndarray:
    design = basis.design_matrix(times)
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    return coef


def dtw_template(
    samples,
    spline_df: int = 12,
    iterations: int = 5,
    pattern: StepPattern = ASYMMETRIC,
    grid_size: int = EVAL_GRID_SIZE,
) -> DtwTemplate:
    """Template of one participant by alternating spline fit and alignment.

    Starting from identity alignment, each round fits an unweighted
    least-squares spline (equidistant interior knots, ``spline_df`` basis
    functions) to the pooled warped points and then re-aligns every sample
    to the current template.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("dtw_template needs at least one sample")
    grid = np.linspace(0.0, 1.0, grid_size)
    curves = [resample_to_grid(s, grid_size) for s in samples]
    basis = SplineBasis(spline_df)
    pooled_t = np.tile(grid, len(curves))
    pooled_v = np.concatenate(curves)
    coef = _spline_fit(basis, pooled_t, pooled_v)
    for _ in range(iterations):
        template = basis.design_matrix(grid) @ coef
        t_parts, v_parts = [], []
        for curve in curves:
            res = dtw_align(curve, template, pattern)
            t_parts.append(grid[res.path[:, 1]])
            v_parts.append(curve[res.path[:, 0]])
        coef = _spline_fit(basis, np.concatenate(t_parts), np.concatenate(v_parts))
    return DtwTemplate(
        grid=grid,
        values=basis.design_matrix(grid) @ coef,
        coefficients=coef,
        spline_df=spline_df,
    )


# ---------------------------------------------------------------------------
# Training and classification

_METHODS = ("tms", "np", "dtw")


def default_spec(
    n_basis: int = 12,
    n_anchors: int = 1,
    penalty: float = 0.0,
    smoothness: float = 1.0,
    **kw,
) -> ModelSpec:
    """Model structure used by the TMS classifier unless one is supplied."""
    return ModelSpec(
        basis=SplineBasis(n_basis),
        warp=WarpConfig(n_anchors),
        amplitude=MaternKernel(scale=1.0, inv_range=50.0, smoothness=smoothness),
        warp_prior=BridgeKernel(scale=100.0),
        penalty=penalty,
        **kw,
    )


@dataclass(frozen=True)
class TrainedClassifier:
    """Per-participant artifacts of one method on one training split."""

    method: str
    participants: tuple
    model: FittedModel | None = None
    training_curves: dict | None = None
    templates: dict | None = None


def train_classifier(dataset: ConditionDataset, method: str, params: dict | None = None) -> TrainedClassifier:
    """Build the training artifacts of one classification method.

    ``params`` feeds the method's knobs: TMS accepts a full ``spec`` or
    keyword arguments of :func:`default_spec`; DTW accepts ``spline_df``,
    ``iterations``, and ``pattern``; NP takes none.
    """
    method = method.lower()
    if method not in _METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {_METHODS}")
    params = dict(params or {})
    participants = dataset.participants
    if method == "tms":
        spec = params.pop("spec", None) or default_spec(**params)
        return TrainedClassifier(
            method=method, participants=participants, model=fit(dataset, spec)
        )
    if method == "np":
        if params:
            raise ConfigError(f"the NP method takes no parameters, got {sorted(params)}")
        curves = {
            p: np.stack([
                resample_to_grid(s) for s in dataset.samples if s.participant == p
            ])
            for p in participants
        }
        return TrainedClassifier(
            method=method, participants=participants, training_curves=curves
        )
    pattern = params.pop("pattern", ASYMMETRIC)
    if isinstance(pattern, str):
        pattern = StepPattern.named(pattern)
    templates = {
        p: dtw_template(
            [s for s in dataset.samples if s.participant == p],
            pattern=pattern,
            **params,
        )
        for p in participants
    }
    return TrainedClassifier(
        method=method, participants=participants, templates=templates
    )


@dataclass(frozen=True)
class ClassificationResult:
    """Predictions in test-sample order, overall accuracy, and the
    true-by-predicted count table."""

    predictions: tuple
    accuracy: float
    confusion: dict

    def confusion_json(self) -> str:
        return json.dumps(self.confusion, sort_keys=True, indent=2)


def _predict_one(sample: FunctionalSample, trained: TrainedClassifier) -> str:
    participants = trained.participants
    if trained.method == "tms":
        scores = [
            posterior_distance(sample, trained.model, p) for p in participants
        ]
    elif trained.method == "np":
        curve = resample_to_grid(sample)
        scores = [
            min(_l2_distance(curve, train) for train in trained.training_curves[p])
            for p in participants
        ]
    else:
        curve = resample_to_grid(sample)
        scores = [
            _l2_distance(curve, trained.templates[p].values) for p in participants
        ]
    return participants[int(np.argmin(scores))]


def classify(test_samples, trained: TrainedClassifier) -> ClassificationResult:
    """Predict the participant of each test sample; ties go to the lowest
    participant in sorted order."""
    test_samples = list(test_samples)
    if not test_samples:
        raise DataError("no test samples to classify")
    if trained.method == "tms" and trained.model is None:
        raise ConfigError("TMS classifier has no fitted model")
    predictions = tuple(_predict_one(s, trained) for s in test_samples)
    hits = sum(p == s.participant for p, s in zip(predictions, test_samples))
    confusion: dict = {}
    for s, p in zip(test_samples, predictions):
        confusion.setdefault(s.participant, {}).setdefault(p, 0)
        confusion[s.participant][p] += 1
    return ClassificationResult(
        predictions=predictions,
        accuracy=hits / len(test_samples),
        confusion=confusion,
    )


# ---------------------------------------------------------------------------
# Chronological cross-validation


@dataclass(frozen=True)
class CvPlan:
    """Chronological fold assignment: per participant, sorted repetitions
    are split into ``folds`` contiguous blocks, so with 10 repetitions fold
    f holds repetitions {2f-1, 2f}."""

    folds: int = 5

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ValueError(f"need at least 2 folds, got {self.folds}")

    def assignments(self, dataset: ConditionDataset) -> list:
        """Fold index per (participant, repetition), as a list of key sets."""
        folds: list = [set() for _ in range(self.folds)]
        for participant, samples in dataset.by_participant.items():
            reps = sorted({s.repetition for s in samples})
            if len(reps) < self.folds:
                raise DataError(
                    f"participant {participant!r} has {len(reps)} repetitions; "
                    f"need at least {self.folds} for {self.folds}-fold validation"
                )
            for f, chunk in enumerate(np.array_split(np.array(reps), self.folds)):
                folds[f].update((participant, int(r)) for r in chunk)
        return folds


@dataclass(frozen=True)
class CvRecord:
    method: str
    params: dict
    fold: int
    accuracy: float


@dataclass(frozen=True)
class CvResult:
    """Grid search outcome: the winning parameters with their fold-level and
    mean accuracies, plus every (grid point, fold) record."""

    method: str
    best_params: dict
    best_accuracy: float
    fold_accuracies: tuple
    records: tuple

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["method", "param_json", "fold", "accuracy"])
        for rec in self.records:
            writer.writerow([
                rec.method,
                json.dumps(rec.params, sort_keys=True),
                rec.fold,
                repr(rec.accuracy),
            ])
        return out.getvalue()


def cross_validate(
    dataset: ConditionDataset,
    method: str,
    hyper_grid,
    plan: CvPlan | None = None,
) -> CvResult:
    """Rotate each fold out as the test set and average the accuracy.

    Returns the grid point with the highest mean accuracy; ties keep the
    earliest point in grid order.
    """
    hyper_grid = [dict(g) for g in hyper_grid]
    if not hyper_grid:
        raise ConfigError("hyperparameter grid is empty")
    plan = plan or CvPlan()
    folds = plan.assignments(dataset)
    records = []
    best_params = None
    best_mean = -np.inf
    best_folds: tuple = ()
    for params in hyper_grid:
        accuracies = []
        for f, keys in enumerate(folds):
            test = [s for s in dataset.samples if (s.participant, s.repetition) in keys]
            train = [s for s in dataset.samples if (s.participant, s.repetition) not in keys]
            trained = train_classifier(ConditionDataset(tuple(train)), method, params)
            result = classify(test, trained)
            accuracies.append(result.accuracy)
            records.append(CvRecord(
                method=method.lower(), params=params, fold=f + 1,
                accuracy=result.accuracy,
            ))
        mean = float(np.mean(accuracies))
        if mean > best_mean:
            best_mean = mean
            best_params = params
            best_folds = tuple(accuracies)
    return CvResult(
        method=method.lower(),
        best_params=best_params,
        best_accuracy=best_mean,
        fold_accuracies=best_folds,
        records=tuple(records),
    )
