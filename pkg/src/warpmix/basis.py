"""B-spline bases on [0, 1] with clamped, equidistant knots.

Evaluation uses the Cox-de Boor recursion over the full knot vector, which is
simple, vectorized over evaluation points, and handles the repeated boundary
knots through the 0/0 = 0 convention.  Derivatives come from the standard
degree-lowering formula, so template slopes used by the warp linearization are
analytic rather than numerical.
"""
from __future__ import annotations

import numpy as np


class SplineBasis:
    """Clamped B-spline basis with equidistant interior knots on [0, 1].

    Parameters
    ----------
    n_basis : int
        Number of basis functions K (columns of the design matrix).
    degree : int
        Polynomial degree p >= 0 (3 gives cubic splines).
    intercept : bool
        If False the first basis function of the clamped family is dropped,
        which removes the constant component; the design matrix then has
        ``n_basis`` columns taken from a family of ``n_basis + 1`` functions.

    Raises
    ------
    ValueError
        If the requested dimension is too small for the degree.
    """

    def __init__(self, n_basis: int, degree: int = 3, intercept: bool = True):
        if degree < 0:
            raise ValueError(f"degree must be non-negative, got {degree}")
        if n_basis < 1:
            raise ValueError(f"n_basis must be at least 1, got {n_basis}")
        family = n_basis if intercept else n_basis + 1
        n_interior = family - degree - 1
        if n_interior < 0:
            minimum = degree + 1 if intercept else degree
            raise ValueError(
                f"n_basis={n_basis} is too small for degree {degree}; "
                f"need at least {minimum}"
            )
        self.n_basis = int(n_basis)
        self.degree = int(degree)
        self.intercept = bool(intercept)
        interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
        self.knots = np.concatenate(
            [np.zeros(degree + 1), interior, np.ones(degree + 1)]
        )
        self._family = family

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return (
            f"SplineBasis(n_basis={self.n_basis}, degree={self.degree}, "
            f"intercept={self.intercept})"
        )

    def _check_domain(self, times: np.ndarray) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        if t.ndim != 1:
            raise ValueError(f"times must be one-dimensional, got shape {t.shape}")
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise ValueError(
                f"evaluation times must lie in [0, 1], got range "
                f"[{t.min():.6g}, {t.max():.6g}]"
            )
        return t

    def _recurse(self, t: np.ndarray, degree: int) -> np.ndarray:
        # Cox-de Boor recursion up to the requested degree; returns every
        # function of that degree on the full knot vector.
        knots = self.knots
        # Degree-zero indicators; the final non-degenerate interval is closed
        # on the right so t = 1 is supported.
        b = (knots[:-1][None, :] <= t[:, None]) & (t[:, None] < knots[1:][None, :])
        b = b.astype(float)
        last = np.max(np.nonzero(knots[1:] > knots[:-1])[0])
        at_edge = t == knots[-1]
        b[at_edge, :] = 0.0
        b[at_edge, last] = 1.0
        for p in range(1, degree + 1):
            nb = np.zeros((t.size, len(knots) - p - 1))
            for k in range(len(knots) - p - 1):
                left_den = knots[k + p] - knots[k]
                right_den = knots[k + p + 1] - knots[k + 1]
                acc = 0.0
                if left_den > 0:
                    acc = (t - knots[k]) / left_den * b[:, k]
                if right_den > 0:
                    acc = acc + (knots[k + p + 1] - t) / right_den * b[:, k + 1]
                nb[:, k] = acc
            b = nb
        return b

    def design_matrix(self, times: np.ndarray) -> np.ndarray:
        """Evaluate all basis functions at ``times``.

        Returns an array of shape ``(len(times), n_basis)`` whose rows sum to
        one when the basis includes the intercept.  Times outside [0, 1]
        raise ``ValueError``.
        """
        t = self._check_domain(times)
        full = self._recurse(t, self.degree)[:, : self._family]
        return full if self.intercept else full[:, 1:]

    def derivative_matrix(self, times: np.ndarray) -> np.ndarray:
        """Evaluate first derivatives of all basis functions at ``times``.

        Uses the degree-lowering identity: the derivative of a degree-p
        function is a weighted difference of two degree-(p-1) functions on
        the same knot vector.
        """
        t = self._check_domain(times)
        p = self.degree
        out = np.zeros((t.size, self._family))
        if p > 0:
            low = self._recurse(t, p - 1)[:, : self._family + 1]
            knots = self.knots
            for k in range(self._family):
                left_den = knots[k + p] - knots[k]
                right_den = knots[k + p + 1] - knots[k + 1]
                if left_den > 0:
                    out[:, k] += p / left_den * low[:, k]
                if right_den > 0:
                    out[:, k] -= p / right_den * low[:, k + 1]
        return out if self.intercept else out[:, 1:]

    def greville_points(self) -> np.ndarray:
        """Knot averages; coefficients equal to these reproduce f(t) = t."""
        p = self.degree
        if p == 0:
            pts = 0.5 * (self.knots[:-1] + self.knots[1:])
        else:
            pts = np.array(
                [self.knots[k + 1 : k + p + 1].mean() for k in range(self._family)]
            )
        return pts if self.intercept else pts[1:]
