"""Command-line interface: config resolution, pipelines, and exports.

Commands cover the full workflow: ``fit`` estimates the hierarchical warp
model and writes the model JSON plus its criterion trace, ``align`` exports
plot-ready warped curves, ``classify``/``cv`` run template classification
and its chronological cross-validation, ``factor`` fits the path factor
model, and ``simulate`` runs a parameter recovery study from a fitted
model.  Configuration comes from an optional JSON file, overridden by
repeated ``--set dotted.key=value`` flags and a few direct flags; the fully
resolved configuration can be echoed with ``--print-config``.

Every command is deterministic given the resolved configuration, artifacts
are staged and atomically moved into the output directory on success, and
failures exit with a machine-readable error JSON on stderr: configuration
problems exit 2, data problems 3, numerical problems 4.
"""
from __future__ import annotations

import argparse
import copy
import dataclasses
import io
import json
import os
import sys
import csv

import numpy as np

from .basis import SplineBasis
from .classify import CvPlan, classify, cross_validate, train_classifier
from .data import (
    acceleration_profile,
    ingest_csv,
    normalize,
    to_sample,
)
from .errors import ConfigError, DataError, NumericsError, WarpmixError
from .factor import (
    FactorDesign,
    PathTensor,
    fit_factor,
    loading_shares,
    prediction_ellipsoid,
    resample_path,
    variance_decomposition,
)
from .kernels import BridgeKernel, MaternKernel, MotionKernel
from .model import FittedModel, ModelSpec, fit
from .sim import RecoveryReport, SimDesign, SimTruth, recovery_study
from .warps import WarpConfig

THREAD_ENV_VAR = "WARPMIX_THREADS"

COMMANDS = ("fit", "align", "classify", "cv", "factor", "simulate")

# Cross-validated defaults per time mode: (n_basis, n_anchors, penalty,
# smoothness).
_MODE_DEFAULTS = {
    "percentual": (12, 1, 0.0, 1.0),
    "recorded": (23, 2, 2.0, 2.0),
}

_DEFAULT_CONFIG = {
    "input": None,
    "test_input": None,
    "model": None,
    "output_dir": "warpmix-out",
    "seed": 0,
    "threads": None,
    "time_mode": "percentual",
    "spec": {
        "n_basis": None,
        "n_anchors": None,
        "penalty": None,
        "smoothness": None,
        "amplitude": "matern",
        "amp_scale": 1.0,
        "amp_inv_range": 50.0,
        "warp_prior": "bridge",
        "warp_scale": 100.0,
        "outer_iterations": 5,
        "inner_iterations": 5,
        "optimize_smoothness": False,
        "bounds": {},
    },
    "classify": {
        "method": "tms",
        "params": {},
    },
    "cv": {
        "method": "dtw",
        "grid": [{"spline_df": 8}, {"spline_df": 13}, {"spline_df": 18}],
        "folds": 5,
    },
    "factor": {
        "q": 2,
        "design": "anova",
        "height_values": None,
        "time_index": 15,
        "level": 0.95,
        "accelerate": True,
        "max_sweeps": 5000,
        "tol": 1e-9,
    },
    "simulate": {
        "n_sim": 20,
        "n_participants": 10,
        "n_repetitions": 10,
        "n_points": 25,
    },
}


# ---------------------------------------------------------------------------
# Configuration resolution


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict) and key not in ("params", "bounds"):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_set(pair: str) -> tuple[list, object]:
    if "=" not in pair:
        raise ConfigError(f"--set needs dotted.key=value, got {pair!r}")
    key, raw = pair.split("=", 1)
    keys = [k for k in key.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"--set needs dotted.key=value, got {pair!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return keys, value


def _apply_set(config: dict, keys: list, value, pair: str) -> None:
    node = config
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown configuration key in --set {pair!r}")
        node = node[k]
    leaf = keys[-1]
    if leaf not in node:
        raise ConfigError(f"unknown configuration key in --set {pair!r}")
    node[leaf] = value


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then --set pairs, then direct flags."""
    config = copy.deepcopy(_DEFAULT_CONFIG)
    if args.config is not None:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
        if not isinstance(from_file, dict):
            raise ConfigError(f"config file {args.config}: expected an object")
        config = _merge(config, from_file)
    for pair in args.set or ():
        keys, value = _parse_set(pair)
        _apply_set(config, keys, value, pair)
    for flag in ("input", "test_input", "model", "output_dir", "seed",
                 "threads", "time_mode"):
        value = getattr(args, flag)
        if value is not None:
            config[flag] = value
    return config


def _require_int(value, name: str, minimum: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def _require_positive(value, name: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
        raise ConfigError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def _require_file(path, name: str) -> str:
    if not isinstance(path, str) or not path:
        raise ConfigError(f"{name} is required for this command")
    if not os.path.isfile(path):
        raise ConfigError(f"{name} not found: {path}")
    return path


_COMMAND_INPUTS = {
    "fit": ("input",),
    "align": ("input",),
    "classify": ("input", "test_input"),
    "cv": ("input",),
    "factor": ("input",),
    "simulate": ("model",),
}


def validate_config(command: str, config: dict) -> dict:
    """Check paths, modes, and numeric ranges; returns the config unchanged."""
    if config["time_mode"] not in _MODE_DEFAULTS:
        raise ConfigError(
            f"time_mode must be 'recorded' or 'percentual', got "
            f"{config['time_mode']!r}"
        )
    _require_int(config["seed"], "seed", 0)
    if config["threads"] is not None:
        _require_int(config["threads"], "threads", 1)
    if not isinstance(config["output_dir"], str) or not config["output_dir"]:
        raise ConfigError("output_dir must be a non-empty path")

    spec = config["spec"]
    for name in ("n_basis", "n_anchors"):
        if spec[name] is not None:
            _require_int(spec[name], f"spec.{name}", 4 if name == "n_basis" else 1)
    if spec["penalty"] is not None and (
        not isinstance(spec["penalty"], (int, float)) or spec["penalty"] < 0
    ):
        raise ConfigError(f"spec.penalty must be non-negative, got {spec['penalty']!r}")
    if spec["smoothness"] is not None:
        _require_positive(spec["smoothness"], "spec.smoothness")
    _require_positive(spec["amp_scale"], "spec.amp_scale")
    _require_positive(spec["amp_inv_range"], "spec.amp_inv_range")
    _require_positive(spec["warp_scale"], "spec.warp_scale")
    _require_int(spec["outer_iterations"], "spec.outer_iterations", 1)
    _require_int(spec["inner_iterations"], "spec.inner_iterations", 1)
    if spec["amplitude"] not in ("matern", "none"):
        raise ConfigError(
            f"spec.amplitude must be 'matern' or 'none', got {spec['amplitude']!r}"
        )
    if spec["warp_prior"] not in ("bridge", "motion"):
        raise ConfigError(
            f"spec.warp_prior must be 'bridge' or 'motion', got "
            f"{spec['warp_prior']!r}"
        )

    if command == "classify":
        if config["classify"]["method"] not in ("tms", "np", "dtw"):
            raise ConfigError(
                f"classify.method must be tms, np, or dtw, got "
                f"{config['classify']['method']!r}"
            )
    if command == "cv":
        cv = config["cv"]
        if cv["method"] not in ("tms", "np", "dtw"):
            raise ConfigError(
                f"cv.method must be tms, np, or dtw, got {cv['method']!r}"
            )
        if not isinstance(cv["grid"], list) or not all(
            isinstance(g, dict) for g in cv["grid"]
        ):
            raise ConfigError("cv.grid must be a list of parameter mappings")
        _require_int(cv["folds"], "cv.folds", 2)
    if command == "factor":
        fac = config["factor"]
        _require_int(fac["q"], "factor.q", 1)
        if fac["design"] not in ("anova", "regression"):
            raise ConfigError(
                f"factor.design must be 'anova' or 'regression', got "
                f"{fac['design']!r}"
            )
        if fac["height_values"] is not None and (
            not isinstance(fac["height_values"], list)
            or len(fac["height_values"]) < 2
        ):
            raise ConfigError("factor.height_values must list >= 2 heights")
        if not 0 <= fac["time_index"] < 30:
            raise ConfigError("factor.time_index must lie in 0..29")
        if not 0.0 < fac["level"] < 1.0:
            raise ConfigError("factor.level must lie strictly between 0 and 1")
        _require_int(fac["max_sweeps"], "factor.max_sweeps", 1)
    if command == "simulate":
        sim = config["simulate"]
        _require_int(sim["n_sim"], "simulate.n_sim", 1)
        _require_int(sim["n_participants"], "simulate.n_participants", 1)
        _require_int(sim["n_repetitions"], "simulate.n_repetitions", 1)
        _require_int(sim["n_points"], "simulate.n_points", 2)

    for name in _COMMAND_INPUTS[command]:
        _require_file(config[name], name)
    if command == "align" and config["model"] is not None:
        _require_file(config["model"], "model")
    return config


def thread_count(config: dict) -> int:
    """Config wins over the environment; both default to one worker."""
    if config["threads"] is not None:
        return int(config["threads"])
    env = os.environ.get(THREAD_ENV_VAR)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(
                f"{THREAD_ENV_VAR} must be an integer, got {env!r}"
            ) from None
    return 1


def build_spec(config: dict) -> ModelSpec:
    """Realize the ModelSpec, filling unset knobs from the time-mode defaults."""
    spec = config["spec"]
    n_basis, n_anchors, penalty, smoothness = _MODE_DEFAULTS[config["time_mode"]]
    if spec["n_basis"] is not None:
        n_basis = spec["n_basis"]
    if spec["n_anchors"] is not None:
        n_anchors = spec["n_anchors"]
    if spec["penalty"] is not None:
        penalty = float(spec["penalty"])
    if spec["smoothness"] is not None:
        smoothness = float(spec["smoothness"])
    amplitude = None
    if spec["amplitude"] == "matern":
        amplitude = MaternKernel(
            scale=float(spec["amp_scale"]),
            inv_range=float(spec["amp_inv_range"]),
            smoothness=smoothness,
        )
    prior_cls = BridgeKernel if spec["warp_prior"] == "bridge" else MotionKernel
    bounds = {k: tuple(v) for k, v in spec["bounds"].items()}
    return ModelSpec(
        basis=SplineBasis(n_basis),
        warp=WarpConfig(n_anchors),
        amplitude=amplitude,
        warp_prior=prior_cls(scale=float(spec["warp_scale"])),
        penalty=penalty,
        outer_iterations=spec["outer_iterations"],
        inner_iterations=spec["inner_iterations"],
        optimize_smoothness=bool(spec["optimize_smoothness"]),
        bounds=bounds,
    )


# ---------------------------------------------------------------------------
# Shared pipeline pieces


def _load_dataset(path: str, time_mode: str):
    trajectories = ingest_csv(path)
    if trajectories[0].coords is not None:
        samples = [acceleration_profile(t) for t in trajectories]
    else:
        samples = [to_sample(t) for t in trajectories]
    return normalize(samples, mode=time_mode)


def _csv_text(header: list, rows: list) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


def write_artifacts(output_dir: str, artifacts: dict) -> list:
    """Stage every file next to its final name, then move all atomically."""
    os.makedirs(output_dir, exist_ok=True)
    staged = []
    try:
        for name, text in artifacts.items():
            temp = os.path.join(output_dir, f".{name}.{os.getpid()}.tmp")
            staged.append((temp, os.path.join(output_dir, name)))
            with open(temp, "w", newline="") as fh:
                fh.write(text)
    except BaseException:
        for temp, _ in staged:
            if os.path.exists(temp):
                os.unlink(temp)
        raise
    final = []
    for temp, target in staged:
        os.replace(temp, target)
        final.append(target)
    return final


# ---------------------------------------------------------------------------
# Command runners; each returns {filename: text}


def _fitted_model(config: dict) -> FittedModel:
    if config["model"] is not None:
        with open(config["model"]) as fh:
            return FittedModel.from_json(fh.read())
    dataset = _load_dataset(config["input"], config["time_mode"])
    return fit(dataset, build_spec(config))


def _run_fit(config: dict) -> dict:
    dataset = _load_dataset(config["input"], config["time_mode"])
    model = fit(dataset, build_spec(config))
    trace_rows = [[step, repr(value)] for step, value in enumerate(model.nll_trace)]
    return {
        "model.json": model.to_json(),
        "nll_trace.csv": _csv_text(["step", "nll"], trace_rows),
    }


def _run_align(config: dict) -> dict:
    dataset = _load_dataset(config["input"], config["time_mode"])
    model = _fitted_model(config)
    rows = []
    for sample in dataset.samples:
        nodes, values = model.curve_warp(sample.participant, sample.repetition)
        warped = np.interp(sample.times, nodes, values)
        for t, u, y in zip(sample.times, warped, sample.values):
            rows.append([
                sample.condition, sample.participant, sample.repetition,
                repr(float(t)), repr(float(u)), repr(float(y)),
            ])
    header = ["condition", "participant", "repetition", "time",
              "warped_time", "value"]
    return {"aligned.csv": _csv_text(header, rows)}


def _run_classify(config: dict) -> dict:
    train = _load_dataset(config["input"], config["time_mode"])
    test = _load_dataset(config["test_input"], config["time_mode"])
    options = config["classify"]
    trained = train_classifier(train, options["method"], options["params"])
    result = classify(test.samples, trained)
    rows = [
        [s.condition, s.participant, s.repetition, predicted,
         int(predicted == s.participant)]
        for s, predicted in zip(test.samples, result.predictions)
    ]
    rows.append(["accuracy", "", "", repr(result.accuracy), ""])
    labels = sorted(
        set(trained.participants) | {s.participant for s in test.samples}
    )
    confusion_rows = [
        [true] + [result.confusion.get(true, {}).get(p, 0) for p in labels]
        for true in labels
    ]
    return {
        "predictions.csv": _csv_text(
            ["condition", "participant", "repetition", "predicted", "correct"],
            rows,
        ),
        "confusion.csv": _csv_text(["true"] + labels, confusion_rows),
    }


def _run_cv(config: dict) -> dict:
    dataset = _load_dataset(config["input"], config["time_mode"])
    options = config["cv"]
    result = cross_validate(
        dataset,
        options["method"],
        options["grid"],
        plan=CvPlan(folds=options["folds"]),
    )
    summary = {
        "method": result.method,
        "best_params": result.best_params,
        "best_accuracy": result.best_accuracy,
        "fold_accuracies": list(result.fold_accuracies),
    }
    return {
        "cv_results.csv": result.to_csv(),
        "cv_summary.json": json.dumps(summary, sort_keys=True, indent=2) + "\n",
    }


def _run_factor(config: dict) -> dict:
    trajectories = ingest_csv(config["input"])
    if trajectories[0].coords is None:
        raise DataError("factor command needs 3-D coordinate data (x, y, z)")
    conditions = sorted({t.condition for t in trajectories})
    height_of = {c: h + 1 for h, c in enumerate(conditions)}
    options = config["factor"]
    height_values = options["height_values"]
    if height_values is None:
        height_values = [float(h) for h in range(len(conditions))]
    if len(height_values) != len(conditions):
        raise ConfigError(
            f"factor.height_values lists {len(height_values)} heights, but the "
            f"data has {len(conditions)} conditions"
        )
    design = FactorDesign(
        kind=options["design"], height_values=tuple(height_values)
    )
    data = [
        PathTensor(
            values=resample_path(t),
            participant=t.participant,
            repetition=t.repetition,
            height=height_of[t.condition],
        )
        for t in trajectories
    ]
    model = fit_factor(
        data,
        options["q"],
        design=design,
        accelerate=bool(options["accelerate"]),
        max_sweeps=options["max_sweeps"],
        tol=float(options["tol"]),
    )
    shares = loading_shares(model)
    scree_rows = [[k + 1, repr(float(s))] for k, s in enumerate(shares)]
    decomposition = variance_decomposition(model)
    variance_rows = [
        [name, repr(float(share))] for name, share in decomposition.items()
    ]
    cov3 = model.time_covariance(
        options["time_index"], levels=("participant",), include_noise=False
    )
    axes, radii = prediction_ellipsoid(cov3, level=options["level"])
    ellipsoid_rows = [
        [k + 1, repr(float(radii[k]))] + [repr(float(v)) for v in axes[:, k]]
        for k in range(3)
    ]
    height_rows = [[c, height_of[c], repr(float(height_values[height_of[c] - 1]))]
                   for c in conditions]
    return {
        "factor_model.json": model.to_json(),
        "scree.csv": _csv_text(["component", "share"], scree_rows),
        "variance.csv": _csv_text(["source", "share"], variance_rows),
        "ellipsoid.csv": _csv_text(
            ["axis", "radius", "x", "y", "z"], ellipsoid_rows
        ),
        "heights.csv": _csv_text(["condition", "height", "value"], height_rows),
    }


def _run_simulate(config: dict) -> dict:
    with open(config["model"]) as fh:
        model = FittedModel.from_json(fh.read())
    truth = SimTruth.from_model(model)
    options = config["simulate"]
    n_participants = options["n_participants"]
    if truth.deviations is not None and len(truth.deviations) != n_participants:
        raise ConfigError(
            f"simulate.n_participants={n_participants} does not match the "
            f"{len(truth.deviations)} participants of the fitted model"
        )
    design = SimDesign(
        n_participants=n_participants,
        n_repetitions=options["n_repetitions"],
        grid=np.linspace(0.0, 1.0, options["n_points"]),
        seed=config["seed"],
    )
    report = recovery_study(
        truth, design, options["n_sim"], n_jobs=thread_count(config)
    )
    return {
        "recovery.csv": report.to_csv(),
        "recovery_summary.json": report.summary_json() + "\n",
    }


_RUNNERS = {
    "fit": _run_fit,
    "align": _run_align,
    "classify": _run_classify,
    "cv": _run_cv,
    "factor": _run_factor,
    "simulate": _run_simulate,
}

_EXIT_CODES = (
    (ConfigError, 2),
    (DataError, 3),
    (NumericsError, 4),
)


def run(command: str, config: dict) -> list:
    """Validate, run one command, and atomically write its artifacts."""
    if command not in _RUNNERS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    validate_config(command, config)
    artifacts = _RUNNERS[command](config)
    return write_artifacts(config["output_dir"], artifacts)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warpmix",
        description="Registration-aware mixed-effects modeling of curve data.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override one configuration entry (dotted keys, JSON values)",
    )
    parser.add_argument("--input", help="input data CSV")
    parser.add_argument("--test-input", dest="test_input", help="test data CSV")
    parser.add_argument("--model", help="fitted model JSON")
    parser.add_argument("--output-dir", dest="output_dir", help="artifact directory")
    parser.add_argument("--seed", type=int, help="root random seed")
    parser.add_argument("--threads", type=int, help="worker count")
    parser.add_argument(
        "--time-mode", dest="time_mode", choices=("recorded", "percentual"),
        help="time normalization and hyperparameter defaults",
    )
    parser.add_argument(
        "--print-config", action="store_true",
        help="echo the fully resolved configuration and exit",
    )
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = resolve_config(args)
        if args.print_config:
            validate_config(args.command, config)
            print(json.dumps(config, sort_keys=True, indent=2))
            return 0
        written = run(args.command, config)
    except WarpmixError as exc:
        code = next(c for t, c in _EXIT_CODES if isinstance(exc, t))
        error = {
            "error": {
                "type": type(exc).__name__,
                "message": str(exc),
                "exit_code": code,
            }
        }
        print(json.dumps(error, sort_keys=True), file=sys.stderr)
        return code
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
