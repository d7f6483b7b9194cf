"""Regenerate the committed CSV fixtures under fixtures/.

Both files are drawn from fixed-seed generators so reruns are bit-identical:

* ``signature.csv``: scalar pen-acceleration-like curves for 3 participants
  with 8 repetitions each, sampled from the hierarchical warp model with
  magnitudes matching motion-capture practice (small warps, short-range
  amplitude variation, noise variance around 1e-4).
* ``paths.csv``: 3-D motion paths for 4 participants, 6 repetitions at each
  of 3 box heights, built from a shared mean arc plus low-rank participant
  effects, a vertical height effect, and smooth repetition noise.

Run from the repository root: ``python3 tools/make_fixtures.py``.
"""
from __future__ import annotations

import csv
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from warpmix import (  # noqa: E402
    BridgeKernel,
    MaternKernel,
    ModelSpec,
    SimDesign,
    SimTruth,
    SplineBasis,
    WarpConfig,
    simulate_dataset,
)

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def _write(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")


def make_signature() -> None:
    basis = SplineBasis(12)
    grid = np.linspace(0.0, 1.0, 300)
    template = (
        0.55
        + 0.30 * np.sin(2.0 * np.pi * grid)
        + 0.18 * np.sin(4.0 * np.pi * grid + 0.7)
        + 0.08 * np.cos(6.0 * np.pi * grid)
    )
    coefficients, *_ = np.linalg.lstsq(
        basis.design_matrix(grid), template, rcond=None
    )

    rng = np.random.Generator(np.random.Philox(20240811))
    deviations = 0.04 * rng.standard_normal((3, coefficients.size))

    spec = ModelSpec(
        basis=basis,
        warp=WarpConfig(1),
        amplitude=MaternKernel(scale=54.4, inv_range=122.0, smoothness=6.2),
        warp_prior=BridgeKernel(scale=14.1),
    )
    truth = SimTruth(
        spec=spec,
        sigma2=1.4e-4,
        coefficients=coefficients,
        deviations=deviations,
    )
    design = SimDesign(
        n_participants=3,
        n_repetitions=8,
        grid=np.linspace(0.0, 1.0, 30),
        seed=61,
        condition="sig",
    )
    dataset = simulate_dataset(truth, design)
    rows = [
        [s.condition, s.participant, s.repetition, repr(float(t)), repr(float(y))]
        for s in dataset.samples
        for t, y in zip(s.times, s.values)
    ]
    _write(
        os.path.join(FIXTURE_DIR, "signature.csv"),
        ["condition", "participant", "repetition", "time", "value"],
        rows,
    )


def _smooth_paths(rng, count: int, times: np.ndarray, scale: float) -> np.ndarray:
    """Random smooth (T, 3) perturbations from a low-frequency sine basis."""
    harmonics = np.stack(
        [np.sin(np.pi * k * times) for k in (1, 2, 3)], axis=1
    )
    weights = rng.standard_normal((count, 3, 3))
    return scale * np.einsum("tk,cki->cti", harmonics, weights)


def make_paths() -> None:
    rng = np.random.Generator(np.random.Philox(20240812))
    times = np.linspace(0.0, 1.3, 40)
    unit = times / times[-1]

    # Mean reach arc in meters: forward, slight lateral drift, vertical lift.
    mean = np.stack(
        [
            0.45 * np.sin(0.5 * np.pi * unit),
            0.05 * np.sin(np.pi * unit),
            0.30 * np.sin(np.pi * unit) ** 2,
        ],
        axis=1,
    )
    lift = np.sin(np.pi * unit) ** 2

    conditions = [("h00", 0.0), ("h08", 7.5), ("h15", 15.0)]
    participants = [f"s{i}" for i in range(1, 5)]
    n_rep = 6

    # Rank-2 participant effects shared across heights.
    comp = _smooth_paths(rng, 2, unit, 1.0)
    comp /= np.sqrt(np.sum(comp**2, axis=(1, 2), keepdims=True))
    scores = rng.standard_normal((len(participants), 2)) * np.array([0.05, 0.025])
    participant_effect = np.einsum("pq,qti->pti", scores, comp)

    rows = []
    for ci, (condition, height_cm) in enumerate(conditions):
        for pi, participant in enumerate(participants):
            interaction = _smooth_paths(rng, 1, unit, 0.008)[0]
            for rep in range(1, n_rep + 1):
                path = (
                    mean
                    + participant_effect[pi]
                    + interaction
                    + (height_cm / 100.0) * lift[:, None] * np.array([0.0, 0.0, 1.0])
                    + _smooth_paths(rng, 1, unit, 0.005)[0]
                    + 0.002 * rng.standard_normal((times.size, 3))
                )
                for t, (x, y, z) in zip(times, path):
                    rows.append([
                        condition, participant, rep, repr(float(t)),
                        repr(float(x)), repr(float(y)), repr(float(z)),
                    ])
    _write(
        os.path.join(FIXTURE_DIR, "paths.csv"),
        ["condition", "participant", "repetition", "time", "x", "y", "z"],
        rows,
    )


if __name__ == "__main__":
    os.makedirs(FIXTURE_DIR, exist_ok=True)
    make_signature()
    make_paths()
