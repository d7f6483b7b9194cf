"""Covariance kernels and the dense SPD linear algebra built on them.

Two kernel families cover the model's random effects: Matern kernels for
serially correlated amplitude variation and Brownian bridge/motion kernels for
warping-function increments.  Kernels carry their own scale but never the
noise variance; that factor is applied at likelihood level.

All weighted norms and log-determinants go through Cholesky factorization with
an escalating jitter policy (1e-10 to 1e-6 times the diagonal scale); explicit
inverses are never formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gamma as _gamma_fn
from scipy.special import kv as _bessel_kv

from .errors import NumericsError

_JITTER_START = 1e-10
_JITTER_STOP = 1e-6


def matern_correlation(distance: np.ndarray, inv_range: float, smoothness: float) -> np.ndarray:
    """Matern correlation (2^(1-mu)/Gamma(mu)) (a d)^mu K_mu(a d).

    ``inv_range`` is the inverse range a, ``smoothness`` the order mu.  The
    value at distance zero is exactly one.  Half-integer orders use the
    closed-form exponential-times-polynomial expression; other orders go
    through the modified Bessel function of the second kind.
    """
    d = np.abs(np.asarray(distance, dtype=float))
    x = inv_range * d
    half = smoothness - 0.5
    if half >= 0 and abs(half - round(half)) < 1e-12:
        return _matern_half_integer(x, int(round(half)))
    out = np.empty_like(x)
    zero = x <= 0.0
    out[zero] = 1.0
    xs = x[~zero]
    with np.errstate(over="ignore"):
        vals = (
            2.0 ** (1.0 - smoothness)
            / _gamma_fn(smoothness)
            * xs**smoothness
            * _bessel_kv(smoothness, xs)
        )
    # Guard against rounding for tiny arguments where the limit is 1.
    out[~zero] = np.minimum(np.nan_to_num(vals, nan=1.0), 1.0)
    return out


def _matern_half_integer(x: np.ndarray, n: int) -> np.ndarray:
    # mu = n + 1/2: exp(-x) * n!/(2n)! * sum_k (n+k)!/(k!(n-k)!) (2x)^(n-k)
    coeffs = [
        math.factorial(n + k) / (math.factorial(k) * math.factorial(n - k))
        for k in range(n + 1)
    ]
    poly = np.zeros_like(x)
    for k, c in enumerate(coeffs):
        poly += c * (2.0 * x) ** (n - k)
    return np.exp(-x) * (math.factorial(n) / math.factorial(2 * n)) * poly


@dataclass(frozen=True)
class MaternKernel:
    """Stationary Matern kernel: scale * correlation(|s - t|).

    Parameters
    ----------
    scale : float
        Marginal variance (the kernel value at distance zero), positive.
    inv_range : float
        Inverse range parameter, positive; larger means faster decay.
    smoothness : float
        Order of the kernel, positive; 0.5 gives the exponential kernel.
    """

    scale: float
    inv_range: float
    smoothness: float

    def __post_init__(self) -> None:
        for name in ("scale", "inv_range", "smoothness"):
            if getattr(self, name) <= 0:
                raise ValueError(f"MaternKernel {name} must be positive, got {getattr(self, name)}")

    def correlation(self, distance: np.ndarray) -> np.ndarray:
        return matern_correlation(distance, self.inv_range, self.smoothness)

    def __call__(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        return self.scale * self.correlation(s - t)

    def matrix(self, times: np.ndarray) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        corr = self.correlation(t[:, None] - t[None, :])
        return self.scale * corr


@dataclass(frozen=True)
class BridgeKernel:
    """Brownian bridge kernel scale * (min(s, t) - s t), pinned at 0 and 1.

    Strictly positive definite on interior points; rows for s in {0, 1}
    vanish, so anchor grids must stay inside the open interval.
    """

    scale: float

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError(f"BridgeKernel scale must be positive, got {self.scale}")

    def __call__(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        return self.scale * (np.minimum(s, t) - s * t)

    def matrix(self, times: np.ndarray) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        return self.scale * (np.minimum(t[:, None], t[None, :]) - t[:, None] * t[None, :])


@dataclass(frozen=True)
class MotionKernel:
    """Brownian motion kernel scale * min(s, t), pinned at 0 only."""

    scale: float

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError(f"MotionKernel scale must be positive, got {self.scale}")

    def __call__(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        return self.scale * np.minimum(s, t)

    def matrix(self, times: np.ndarray) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        return self.scale * np.minimum(t[:, None], t[None, :])


def kernel_eval(kernel, s, t) -> np.ndarray:
    """Evaluate a kernel pointwise; thin dispatch onto the kernel object."""
    return kernel(s, t)


def build_cov(kernel, times: np.ndarray) -> np.ndarray:
    """Dense covariance matrix of ``kernel`` on the grid ``times``."""
    return kernel.matrix(times)


class SpdFactor:
    """Cholesky factor of an SPD matrix with the escalating jitter policy.

    Tries the plain factorization first, then adds jitter growing from
    1e-10 to 1e-6 times the largest diagonal entry.  Failure past the cap
    raises :class:`NumericsError`.
    """

    def __init__(self, matrix: np.ndarray):
        a = np.asarray(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        diag_scale = float(np.max(np.abs(np.diag(a)))) if a.size else 0.0
        jitter = 0.0
        attempt = _JITTER_START
        while True:
            try:
                self.lower = cholesky(
                    a + jitter * np.eye(a.shape[0]) if jitter else a, lower=True
                )
                break
            except np.linalg.LinAlgError:
                if attempt > _JITTER_STOP:
                    raise NumericsError(
                        f"matrix of size {a.shape[0]} is not positive definite even "
                        f"after jitter {jitter:.1e}; check kernel parameters or data"
                    ) from None
                jitter = attempt * (diag_scale if diag_scale > 0 else 1.0)
                attempt *= 10.0
        self.jitter = jitter
        self.size = a.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve A x = b."""
        return cho_solve((self.lower, True), b)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """Solve L x = b with the lower triangular factor."""
        return solve_triangular(self.lower, b, lower=True)

    def quad_form(self, z: np.ndarray) -> float:
        """Quadratic form z^T A^{-1} z, non-negative by construction."""
        u = self.half_solve(z)
        return float(u @ u)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def weighted_norm(matrix: np.ndarray, z: np.ndarray) -> float:
    """Squared weighted norm z^T A^{-1} z through a Cholesky solve."""
    z = np.asarray(z, dtype=float)
    return SpdFactor(matrix).quad_form(z)


def logdet(matrix: np.ndarray) -> float:
    """Log-determinant of an SPD matrix via its Cholesky factor."""
    return SpdFactor(matrix).logdet()
