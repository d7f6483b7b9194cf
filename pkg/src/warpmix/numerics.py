"""Small numerical utilities: chi-square tail probabilities and box-constrained
minimization.

The chi-square CDF is computed through the regularized lower incomplete gamma
function, using the power series for small arguments and a modified Lentz
continued fraction otherwise; quantiles invert the CDF by bisection.  The
minimizer wraps a projected quasi-Newton method with a derivative-free simplex
fallback; both are deterministic, so repeated calls with identical inputs give
identical results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

_EPS = 1e-15
_FPMIN = 1e-300
_MAX_ITER = 500


def _gamma_series(a: float, x: float) -> float:
    # Power series for P(a, x); converges fast for x < a + 1.
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError(f"incomplete gamma series failed to converge (a={a}, x={x})")


def _gamma_cont_fraction(a: float, x: float) -> float:
    # Modified Lentz evaluation of the continued fraction for Q(a, x) = 1 - P(a, x).
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError(f"incomplete gamma fraction failed to converge (a={a}, x={x})")


def regularized_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x) for a > 0, x >= 0."""
    if a <= 0:
        raise ValueError(f"shape parameter must be positive, got {a}")
    if x < 0:
        raise ValueError(f"argument must be non-negative, got {x}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cont_fraction(a, x)


def chi2_cdf(x: float, df: float) -> float:
    """CDF of the chi-square distribution with ``df`` degrees of freedom.

    Equals P(df/2, x/2) with P the regularized lower incomplete gamma
    function; monotone non-decreasing in ``x``.
    """
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if x < 0:
        return 0.0
    return min(1.0, max(0.0, regularized_lower_gamma(0.5 * df, 0.5 * x)))


def chi2_quantile(p: float, df: float, tol: float = 1e-10) -> float:
    """Quantile of the chi-square distribution, inverted by bisection.

    Parameters
    ----------
    p : float
        Probability level, strictly between 0 and 1.
    df : float
        Degrees of freedom, positive.
    tol : float
        Absolute width of the final bisection bracket.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability level must lie in (0, 1), got {p}")
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    lo, hi = 0.0, df + 10.0
    while chi2_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError("quantile bracket expansion failed")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class OptimizerSettings:
    """Settings for :func:`bounded_minimize`.

    ``method`` is one of ``"auto"`` (quasi-Newton, simplex fallback on
    failure), ``"quasi-newton"``, or ``"simplex"``.
    """

    method: str = "auto"
    max_iterations: int = 500
    gradient_tol: float = 1e-8
    step_tol: float = 1e-10
    value_tol: float = 1e-12
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in ("auto", "quasi-newton", "simplex"):
            raise ValueError(f"unknown optimizer method: {self.method!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    status: str
    n_evaluations: int


def _clip_to_bounds(x: np.ndarray, bounds: Sequence[tuple[float, float]] | None) -> np.ndarray:
    if bounds is None:
        return x
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.minimum(np.maximum(x, lo), hi)


def bounded_minimize(
    fun: Callable[[np.ndarray], float],
    x0: Sequence[float],
    bounds: Sequence[tuple[float, float]] | None = None,
    jac: Callable[[np.ndarray], np.ndarray] | bool | None = None,
    settings: OptimizerSettings | None = None,
) -> MinimizeResult:
    """Minimize ``fun`` over a box, never returning a point worse than the start.

    A projected quasi-Newton method handles smooth objectives (with ``jac``
    when available, finite differences otherwise); a simplex search serves as
    the derivative-free fallback.  ``jac=True`` means ``fun`` returns a
    ``(value, gradient)`` pair.  The returned value never exceeds
    ``fun(x0)``: if no candidate improves on the initial point, the initial
    point is returned with status ``"initial"``.
    """
    cfg = settings or OptimizerSettings()
    x0 = _clip_to_bounds(np.asarray(x0, dtype=float), bounds)
    if jac is True:
        value_of = lambda x: float(fun(x)[0])  # noqa: E731
        scalar_fun = lambda x: fun(x)[0]  # noqa: E731
    else:
        value_of = lambda x: float(fun(x))  # noqa: E731
        scalar_fun = fun
    f0 = value_of(x0)
    candidates: list[tuple[np.ndarray, float, str, int]] = []

    def _run_quasi_newton() -> None:
        res = optimize.minimize(
            fun,
            x0,
            jac=jac,
            bounds=bounds,
            method="L-BFGS-B",
            options={
                "maxiter": cfg.max_iterations,
                "gtol": cfg.gradient_tol,
                "ftol": cfg.value_tol,
            },
        )
        status = "converged" if res.success else "max-iterations"
        candidates.append((np.asarray(res.x), float(res.fun), status, int(res.nfev)))

    def _run_simplex() -> None:
        res = optimize.minimize(
            scalar_fun,
            x0,
            bounds=bounds,
            method="Nelder-Mead",
            options={
                "maxiter": cfg.max_iterations * max(8, len(x0)),
                "xatol": cfg.step_tol,
                "fatol": cfg.value_tol,
                "adaptive": len(x0) > 4,
            },
        )
        status = "converged" if res.success else "max-iterations"
        candidates.append((np.asarray(res.x), float(res.fun), status, int(res.nfev)))

    if cfg.method in ("auto", "quasi-newton"):
        try:
            _run_quasi_newton()
        except (ValueError, FloatingPointError, ArithmeticError):
            pass
        need_fallback = not candidates or not np.isfinite(candidates[-1][1])
        if cfg.method == "auto" and need_fallback:
            _run_simplex()
    if cfg.method == "simplex":
        _run_simplex()

    best = None
    n_eval = sum(c[3] for c in candidates)
    for x, value, status, _ in candidates:
        if np.isfinite(value) and (best is None or value < best[1]):
            best = (_clip_to_bounds(x, bounds), value, status)
    if best is None or best[1] > f0:
        return MinimizeResult(x=x0, value=f0, status="initial", n_evaluations=n_eval)
    return MinimizeResult(x=best[0], value=best[1], status=best[2], n_evaluations=n_eval)
