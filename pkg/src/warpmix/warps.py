"""Warping functions parametrized by values at equidistant interior anchors.

A warp is the interpolation through (0, 0), (anchor_k, value_k), (1, 1): the
fixed part of a curve's time transformation carries the anchor values nu, and
the random part shifts them by w, so the combined warp interpolates nu + w.
Interpolation is piecewise linear by default (an increasing homeomorphism
whenever the anchor values are increasing) with a smooth natural-cubic option.
Both interpolants are linear in the anchor values, which keeps the Jacobian
with respect to w independent of w.

During estimation monotonicity is handled softly: anchor values may leave the
feasible region, and only stored or exported warps are projected back onto
strictly increasing sequences (isotonic projection with a minimum gap).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline


@dataclass(frozen=True)
class WarpConfig:
    """Anchor layout and interpolation rule for warping functions.

    Parameters
    ----------
    n_anchors : int
        Number of interior anchor points, at least 1.
    interpolation : str
        ``"linear"`` (default) or ``"cubic"`` (natural cubic spline).
    min_gap : float
        Minimum anchor spacing enforced by the homeomorphism projection.
    """

    n_anchors: int
    interpolation: str = "linear"
    min_gap: float = 1e-4
    anchors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n_anchors < 1:
            raise ValueError(f"n_anchors must be at least 1, got {self.n_anchors}")
        if self.interpolation not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation: {self.interpolation!r}")
        if not 0 < self.min_gap < 1.0 / (self.n_anchors + 1):
            raise ValueError(
                f"min_gap must lie in (0, 1/(n_anchors+1)), got {self.min_gap}"
            )
        anchors = np.linspace(0.0, 1.0, self.n_anchors + 2)[1:-1]
        object.__setattr__(self, "anchors", anchors)

    @property
    def identity_values(self) -> np.ndarray:
        """Anchor values that make the warp the identity map."""
        return self.anchors.copy()

    def nodes(self) -> np.ndarray:
        """Interpolation nodes including the pinned endpoints."""
        return np.concatenate([[0.0], self.anchors, [1.0]])


def _node_values(cfg: WarpConfig, values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (cfg.n_anchors,):
        raise ValueError(
            f"expected {cfg.n_anchors} anchor values, got shape {v.shape}"
        )
    return np.concatenate([[0.0], v, [1.0]])


def eval_warp(
    cfg: WarpConfig,
    fixed: np.ndarray,
    rand: np.ndarray | None,
    times: np.ndarray,
) -> np.ndarray:
    """Evaluate the combined warp at ``times``.

    ``fixed`` holds the anchor values nu of the systematic warp; ``rand``
    (optional) holds the random shift w added to them.  The result
    interpolates (0, 0), (anchor_k, nu_k + w_k), (1, 1).  Values are not
    clamped here: a non-monotone anchor sequence yields a non-monotone
    function, and clamping to [0, 1] happens only where a spline basis is
    evaluated.
    """
    t = np.asarray(times, dtype=float)
    combined = np.asarray(fixed, dtype=float)
    if rand is not None:
        combined = combined + np.asarray(rand, dtype=float)
    node_vals = _node_values(cfg, combined)
    if cfg.interpolation == "linear":
        return np.interp(t, cfg.nodes(), node_vals)
    spline = CubicSpline(cfg.nodes(), node_vals, bc_type="natural")
    return spline(t)


def warp_jacobian(cfg: WarpConfig, times: np.ndarray) -> np.ndarray:
    """Derivative of the warp values with respect to the anchor shifts.

    Returns an array of shape ``(len(times), n_anchors)``.  Because both
    interpolants are linear operators of the anchor values, the Jacobian does
    not depend on the current warp; column k is the cardinal interpolant that
    is one at anchor k and zero at the other nodes.
    """
    t = np.asarray(times, dtype=float)
    nodes = cfg.nodes()
    out = np.empty((t.size, cfg.n_anchors))
    for k in range(cfg.n_anchors):
        unit = np.zeros(nodes.size)
        unit[k + 1] = 1.0
        if cfg.interpolation == "linear":
            out[:, k] = np.interp(t, nodes, unit)
        else:
            out[:, k] = CubicSpline(nodes, unit, bc_type="natural")(t)
    return out


def _isotonic_projection(z: np.ndarray) -> np.ndarray:
    # Pool-adjacent-violators for the unweighted nondecreasing projection.
    vals: list[float] = []
    wts: list[float] = []
    counts: list[int] = []
    for v in z:
        vals.append(float(v))
        wts.append(1.0)
        counts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            w = wts[-2] + wts[-1]
            vals[-2] = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / w
            wts[-2] = w
            counts[-2] += counts[-1]
            del vals[-1], wts[-1], counts[-1]
    out = np.empty(len(z))
    pos = 0
    for v, c in zip(vals, counts):
        out[pos : pos + c] = v
        pos += c
    return out


def enforce_homeomorphism(
    cfg: WarpConfig,
    fixed: np.ndarray,
    rand: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None, bool]:
    """Project the combined anchor values onto strictly increasing sequences.

    The combined values nu + w are projected (in least squares) onto the set
    of sequences increasing by at least ``cfg.min_gap`` between consecutive
    nodes including the pinned endpoints 0 and 1.  The adjustment is applied
    to the fixed part, leaving the random shifts untouched; only the combined
    warp needs to be a homeomorphism.

    Returns
    -------
    (fixed_adj, rand, changed) : tuple
        Adjusted fixed anchor values, the unchanged random part, and a flag
        that is True when the projection moved any value.
    """
    fixed = np.asarray(fixed, dtype=float)
    w = None if rand is None else np.asarray(rand, dtype=float)
    combined = fixed if w is None else fixed + w
    if combined.shape != (cfg.n_anchors,):
        raise ValueError(
            f"expected {cfg.n_anchors} anchor values, got shape {combined.shape}"
        )
    delta = cfg.min_gap
    k = np.arange(1, cfg.n_anchors + 1)
    # Shift so the gap constraints become plain monotonicity with box bounds.
    z = combined - k * delta
    z_proj = _isotonic_projection(z)
    z_proj = np.clip(z_proj, 0.0, 1.0 - (cfg.n_anchors + 1) * delta)
    projected = z_proj + k * delta
    changed = bool(np.max(np.abs(projected - combined)) > 1e-12)
    fixed_adj = projected if w is None else projected - w
    return fixed_adj, w, changed
