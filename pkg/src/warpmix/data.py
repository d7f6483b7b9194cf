"""Data ingestion and preprocessing for repeated functional observations.

The CSV layout has one sample point per row with columns
``condition,participant,repetition,time`` followed by either a single
``value`` column (scalar signals) or ``x,y,z`` columns (3-D motion paths).
Paths are reduced to scalar curves through the acceleration magnitude of the
speed profile, and every curve is brought onto the unit time interval by one
of two normalizations: a shared affine map of recorded time, or a per-curve
(percentual) map.  Values are always rescaled by one shared affine map so the
global value span has length one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

VALUE_COLUMNS = ("value",)
COORD_COLUMNS = ("x", "y", "z")
_KEY_COLUMNS = ("condition", "participant", "repetition", "time")


def _as_strictly_increasing(times: np.ndarray, label: str) -> None:
    if np.any(np.diff(times) <= 0):
        raise DataError(f"time points of trajectory {label} are not strictly increasing")


@dataclass(frozen=True)
class RawTrajectory:
    """One recorded trajectory: strictly increasing times with 3-D coordinates
    or scalar values, tagged by condition, participant, and repetition."""

    times: np.ndarray
    condition: str
    participant: str
    repetition: int
    coords: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if (self.coords is None) == (self.values is None):
            raise ValueError("exactly one of coords and values must be given")
        if self.repetition < 1:
            raise DataError(f"repetition index must be positive, got {self.repetition}")
        if times.size < 2:
            raise DataError(f"trajectory {self.label()} has fewer than 2 points")
        if not np.all(np.isfinite(times)):
            raise DataError(f"trajectory {self.label()} has non-finite time points")
        _as_strictly_increasing(times, self.label())
        if self.coords is not None:
            coords = np.asarray(self.coords, dtype=float)
            object.__setattr__(self, "coords", coords)
            if coords.shape != (times.size, 3):
                raise ValueError(
                    f"coords must have shape ({times.size}, 3), got {coords.shape}"
                )
            if not np.all(np.isfinite(coords)):
                raise DataError(f"trajectory {self.label()} has non-finite coordinates")
        else:
            values = np.asarray(self.values, dtype=float)
            object.__setattr__(self, "values", values)
            if values.shape != (times.size,):
                raise ValueError(
                    f"values must have shape ({times.size},), got {values.shape}"
                )
            if not np.all(np.isfinite(values)):
                raise DataError(f"trajectory {self.label()} has non-finite values")

    def label(self) -> str:
        return f"({self.condition}, {self.participant}, rep {self.repetition})"


@dataclass(frozen=True)
class FunctionalSample:
    """A scalar curve sampled at strictly increasing time points.

    Samples produced by :func:`normalize` live on [0, 1]; samples coming
    straight from :func:`acceleration_profile` or :func:`to_sample` keep
    their original scales until normalized.
    """

    times: np.ndarray
    values: np.ndarray
    condition: str
    participant: str
    repetition: int

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValueError(
                f"times and values must be 1-D of equal length, got "
                f"{times.shape} and {values.shape}"
            )
        if times.size < 2:
            raise DataError(f"sample {self.label()} has fewer than 2 points")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise DataError(f"sample {self.label()} has non-finite entries")
        _as_strictly_increasing(times, self.label())

    def label(self) -> str:
        return f"({self.condition}, {self.participant}, rep {self.repetition})"

    @property
    def n_points(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class ConditionDataset:
    """Normalized samples grouped by participant, possibly several conditions.

    Construction sorts samples canonically by (condition, participant,
    repetition) so downstream estimates do not depend on input order, and
    checks that all time points lie in [0, 1].
    """

    samples: tuple[FunctionalSample, ...]
    by_participant: dict[str, tuple[FunctionalSample, ...]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        ordered = tuple(
            sorted(self.samples, key=lambda s: (s.condition, s.participant, s.repetition))
        )
        object.__setattr__(self, "samples", ordered)
        if not ordered:
            raise DataError("dataset contains no samples")
        groups: dict[str, list[FunctionalSample]] = {}
        for s in ordered:
            if s.times[0] < 0.0 or s.times[-1] > 1.0:
                raise DataError(
                    f"sample {s.label()} has times outside [0, 1]; normalize first"
                )
            groups.setdefault(s.participant, []).append(s)
        object.__setattr__(
            self,
            "by_participant",
            {p: tuple(v) for p, v in sorted(groups.items())},
        )

    @property
    def participants(self) -> tuple[str, ...]:
        return tuple(self.by_participant.keys())

    @property
    def conditions(self) -> tuple[str, ...]:
        return tuple(sorted({s.condition for s in self.samples}))

    @property
    def n_participants(self) -> int:
        return len(self.by_participant)

    @property
    def n_points_total(self) -> int:
        return int(sum(s.n_points for s in self.samples))

    def points_per_participant(self) -> dict[str, int]:
        return {p: sum(s.n_points for s in ss) for p, ss in self.by_participant.items()}

    def subset(self, condition: str) -> "ConditionDataset":
        picked = tuple(s for s in self.samples if s.condition == condition)
        if not picked:
            raise DataError(f"no samples with condition {condition!r}")
        return ConditionDataset(picked)


def ingest_csv(path) -> list[RawTrajectory]:
    """Read trajectories from a CSV file.

    Rows are grouped by (condition, participant, repetition) and sorted by
    time within each group.  Parse failures report the offending line number;
    duplicate time points within a trajectory are rejected.
    """
    groups: dict[tuple[str, str, int], list[tuple[float, tuple[float, ...]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        names = [n.strip() for n in reader.fieldnames]
        missing = [c for c in _KEY_COLUMNS if c not in names]
        if missing:
            raise DataError(f"{path}: missing required columns {missing}")
        has_value = all(c in names for c in VALUE_COLUMNS)
        has_coords = all(c in names for c in COORD_COLUMNS)
        if has_value == has_coords:
            raise DataError(
                f"{path}: need either a 'value' column or 'x','y','z' columns"
            )
        data_cols = VALUE_COLUMNS if has_value else COORD_COLUMNS
        for line, row in enumerate(reader, start=2):
            try:
                condition = row["condition"].strip()
                participant = row["participant"].strip()
                repetition = int(row["repetition"])
                time = float(row["time"])
                payload = tuple(float(row[c]) for c in data_cols)
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: line {line}: cannot parse row ({exc})") from None
            if not condition or not participant:
                raise DataError(f"{path}: line {line}: empty condition or participant")
            groups.setdefault((condition, participant, repetition), []).append(
                (time, payload)
            )
    if not groups:
        raise DataError(f"{path}: no data rows")
    out = []
    for (condition, participant, repetition), rows in sorted(groups.items()):
        rows.sort(key=lambda r: r[0])
        times = np.array([r[0] for r in rows])
        if np.any(np.diff(times) <= 0):
            raise DataError(
                f"{path}: duplicate time points in trajectory "
                f"({condition}, {participant}, rep {repetition})"
            )
        payload = np.array([r[1] for r in rows])
        if has_value:
            traj = RawTrajectory(
                times=times,
                condition=condition,
                participant=participant,
                repetition=repetition,
                values=payload[:, 0],
            )
        else:
            traj = RawTrajectory(
                times=times,
                condition=condition,
                participant=participant,
                repetition=repetition,
                coords=payload,
            )
        out.append(traj)
    return out


def to_sample(traj: RawTrajectory) -> FunctionalSample:
    """View a scalar trajectory as a functional sample (no rescaling)."""
    if traj.values is None:
        raise ValueError(
            f"trajectory {traj.label()} holds 3-D coordinates; "
            "use acceleration_profile first"
        )
    return FunctionalSample(
        times=traj.times,
        values=traj.values,
        condition=traj.condition,
        participant=traj.participant,
        repetition=traj.repetition,
    )


def acceleration_profile(traj: RawTrajectory) -> FunctionalSample:
    """Scalar acceleration magnitude of a 3-D trajectory.

    Speeds are chord lengths over time steps, placed at segment midpoints;
    the acceleration is their central difference evaluated at the original
    interior time points, so the output drops one point at each end.
    """
    if traj.coords is None:
        raise ValueError(f"trajectory {traj.label()} has no coordinates")
    if traj.times.size < 4:
        raise DataError(
            f"trajectory {traj.label()} has {traj.times.size} points; "
            "need at least 4 for an acceleration profile"
        )
    dt = np.diff(traj.times)
    seg = np.linalg.norm(np.diff(traj.coords, axis=0), axis=1)
    speeds = seg / dt
    midpoints = 0.5 * (traj.times[:-1] + traj.times[1:])
    accel = np.diff(speeds) / np.diff(midpoints)
    return FunctionalSample(
        times=traj.times[1:-1],
        values=accel,
        condition=traj.condition,
        participant=traj.participant,
        repetition=traj.repetition,
    )


def normalize(samples, mode: str = "percentual") -> ConditionDataset:
    """Normalize times onto [0, 1] and values onto a unit global span.

    ``mode="recorded"`` applies one affine time map shared by every sample
    (the global time span becomes [0, 1]); ``mode="percentual"`` maps each
    sample separately onto [0, 1].  Values are always transformed by the one
    shared affine map that sends the global value range onto [0, 1], tying
    the value scale across conditions.  Applying the function twice gives the
    same result as applying it once.
    """
    if mode not in ("recorded", "percentual"):
        raise ValueError(f"unknown normalization mode: {mode!r}")
    samples = list(samples)
    if not samples:
        raise DataError("nothing to normalize")
    v_min = min(float(np.min(s.values)) for s in samples)
    v_max = max(float(np.max(s.values)) for s in samples)
    if v_max - v_min <= 0:
        raise DataError("degenerate data: global value span is zero")
    v_span = v_max - v_min
    if mode == "recorded":
        t_min = min(float(s.times[0]) for s in samples)
        t_max = max(float(s.times[-1]) for s in samples)
        if t_max - t_min <= 0:
            raise DataError("degenerate data: global time span is zero")
    out = []
    for s in samples:
        if mode == "recorded":
            times = (s.times - t_min) / (t_max - t_min)
        else:
            times = (s.times - s.times[0]) / (s.times[-1] - s.times[0])
        out.append(
            FunctionalSample(
                times=times,
                values=(s.values - v_min) / v_span,
                condition=s.condition,
                participant=s.participant,
                repetition=s.repetition,
            )
        )
    return ConditionDataset(tuple(out))
