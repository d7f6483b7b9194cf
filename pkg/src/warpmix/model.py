"""Hierarchical mixed-effects model for misaligned functional data.

Each curve is modeled as a participant-specific template evaluated at a
participant-plus-repetition time warp, with a serially correlated amplitude
process and white noise on top:

    y_ij(t_k) = (theta + phi_i)(u_ij(t_k)) + x_ij(t_k) + eps_ij(t_k)

where theta = common template, phi_i = participant deviation (both spline
expansions), and u_ij interpolates the fixed anchor values nu_i shifted by a
random vector w_ij.  The random effects carry the noise variance as a common
factor: w_ij ~ N(0, sigma2 C), x_ij ~ N(0, sigma2 S), eps ~ N(0, sigma2 I).

Estimation alternates three levels:

1. templates by generalized least squares at fixed warps (ridge for the
   participant deviations, which are then recentered to sum to zero);
2. warps by minimizing the posterior criterion
   sum_j |y_ij - template(u_ij)|^2_{I+S} + sum_j |w_ij|^2_C
   jointly over (nu_i, {w_ij}) per participant, with analytic gradients;
3. variance parameters by minimizing the Laplace-approximate marginal
   likelihood of the model linearized in w around the predicted warps, with
   the noise variance profiled out in closed form.

Monotonicity is enforced softly during optimization; stored warps are
projected onto strictly increasing sequences only when read out.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import __about__
from .basis import SplineBasis
from .data import ConditionDataset, FunctionalSample
from .errors import DataError, NumericsError
from .kernels import BridgeKernel, MaternKernel, MotionKernel, SpdFactor
from .numerics import OptimizerSettings, bounded_minimize
from .warps import WarpConfig, enforce_homeomorphism, eval_warp, warp_jacobian

_DEFAULT_BOUNDS = {
    "warp_scale": (1e-8, 1e8),
    "amp_scale": (1e-8, 1e8),
    "inv_range": (1e-2, 1e4),
    "smoothness": (0.3, 20.0),
}


@dataclass
class ModelSpec:
    """Model structure and fitting controls.

    Parameters
    ----------
    basis : SplineBasis
        Spline basis for the common template and participant deviations.
    warp : WarpConfig
        Anchor layout of the warping functions.
    amplitude : MaternKernel or None
        Starting amplitude kernel (scale and range are re-estimated); None
        drops the amplitude random effect.
    warp_prior : BridgeKernel or MotionKernel
        Starting covariance of the random warp shifts (scale re-estimated).
    penalty : float
        Ridge weight lambda on participant deviations; the effective ridge is
        lambda / (1 + amplitude scale).
    outer_iterations, inner_iterations : int
        Iteration counts of the variance-update and alignment loops.
    inner_tol : float
        Inner loop stops when no warp anchor moves more than this.
    optimize_smoothness : bool
        Re-estimate the Matern smoothness along with the other variance
        parameters instead of keeping it fixed.
    """

    basis: SplineBasis
    warp: WarpConfig
    amplitude: MaternKernel | None
    warp_prior: BridgeKernel | MotionKernel
    penalty: float = 0.0
    outer_iterations: int = 5
    inner_iterations: int = 5
    inner_tol: float = 1e-6
    optimize_smoothness: bool = False
    bounds: dict = field(default_factory=lambda: dict(_DEFAULT_BOUNDS))
    warp_optimizer: OptimizerSettings = field(
        default_factory=lambda: OptimizerSettings(method="quasi-newton", max_iterations=200)
    )
    variance_optimizer: OptimizerSettings = field(
        default_factory=lambda: OptimizerSettings(method="auto", max_iterations=60)
    )

    def __post_init__(self) -> None:
        if self.penalty < 0:
            raise ValueError(f"penalty must be non-negative, got {self.penalty}")
        if self.outer_iterations < 1 or self.inner_iterations < 1:
            raise ValueError("iteration counts must be at least 1")
        merged = dict(_DEFAULT_BOUNDS)
        merged.update(self.bounds)
        self.bounds = merged

    @property
    def ridge(self) -> float:
        amp_scale = self.amplitude.scale if self.amplitude is not None else 0.0
        return self.penalty / (1.0 + amp_scale)


# ---------------------------------------------------------------------------
# Internal fitting context


class _Curve:
    __slots__ = ("times", "values", "hat", "base", "grid_key", "participant", "repetition")

    def __init__(self, sample: FunctionalSample, cfg: WarpConfig, p_index: int):
        self.times = sample.times
        self.values = sample.values
        self.hat = warp_jacobian(cfg, sample.times)
        # Warp value with all anchors at zero; the warp is base + hat @ anchors.
        self.base = eval_warp(cfg, np.zeros(cfg.n_anchors), None, sample.times)
        self.grid_key = sample.times.tobytes()
        self.participant = p_index
        self.repetition = sample.repetition


class _Context:
    """Precomputed structures shared by the estimation steps."""

    def __init__(self, dataset: ConditionDataset, spec: ModelSpec):
        if len(dataset.conditions) != 1:
            raise ValueError(
                f"fit one condition at a time, got {dataset.conditions}; "
                "use ConditionDataset.subset"
            )
        self.dataset = dataset
        self.spec = spec
        self.participants = dataset.participants
        self.curves: list[_Curve] = []
        self.per_participant: list[list[int]] = [[] for _ in self.participants]
        index_of = {p: i for i, p in enumerate(self.participants)}
        for sample in dataset.samples:
            i = index_of[sample.participant]
            curve = _Curve(sample, spec.warp, i)
            self.per_participant[i].append(len(self.curves))
            self.curves.append(curve)
        self.grids: dict[bytes, np.ndarray] = {}
        for c in self.curves:
            self.grids.setdefault(c.grid_key, c.times)
        self.total_points = sum(c.times.size for c in self.curves)
        self.n_w = spec.warp.n_anchors
        self.amp_factors: dict[bytes, SpdFactor] = {}
        self.prior_factor: SpdFactor | None = None
        self.amplitude = spec.amplitude
        self.warp_prior = spec.warp_prior
        self.set_kernels(spec.amplitude, spec.warp_prior)

    def set_kernels(self, amplitude, warp_prior) -> None:
        self.amplitude = amplitude
        self.warp_prior = warp_prior
        self.amp_factors = {}
        for key, times in self.grids.items():
            eye = np.eye(times.size)
            if amplitude is None:
                self.amp_factors[key] = SpdFactor(eye)
            else:
                self.amp_factors[key] = SpdFactor(eye + amplitude.matrix(times))
        self.prior_factor = SpdFactor(warp_prior.matrix(self.spec.warp.anchors))

    @property
    def ridge(self) -> float:
        amp_scale = self.amplitude.scale if self.amplitude is not None else 0.0
        return self.spec.penalty / (1.0 + amp_scale)

    def identity_state(self) -> tuple[np.ndarray, np.ndarray]:
        nu = np.tile(self.spec.warp.identity_values, (len(self.participants), 1))
        w = np.zeros((len(self.curves), self.n_w))
        return nu, w

    def combined_anchor_values(self, nu: np.ndarray, w: np.ndarray, k: int) -> np.ndarray:
        c = self.curves[k]
        return nu[c.participant] + w[k]

    def warp_values(self, nu: np.ndarray, w: np.ndarray, k: int) -> np.ndarray:
        c = self.curves[k]
        return c.base + c.hat @ (nu[c.participant] + w[k])


def _design_at_warp(basis: SplineBasis, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Clamp to the basis domain; points pushed to the boundary contribute a
    # zero slope so gradients vanish there.
    uc = np.clip(u, 0.0, 1.0)
    inside = ((u > 0.0) & (u < 1.0)) | (u == uc)
    phi = basis.design_matrix(uc)
    dphi = basis.derivative_matrix(uc)
    return phi, dphi, inside.astype(float)


# ---------------------------------------------------------------------------
# Level 1: templates by GLS / ridge


def _solve_normal_equations(a: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NumericsError(
            f"normal equations for {what} are singular; the warped design is "
            "rank deficient - reduce n_basis or add a penalty"
        ) from None
    z = np.linalg.solve(lower, b)
    return np.linalg.solve(lower.T, z)


def _theta_system(ctx: _Context, nu: np.ndarray, w: np.ndarray):
    k = ctx.spec.basis.n_basis
    a = np.zeros((k, k))
    b = np.zeros(k)
    per_curve = []
    for idx, curve in enumerate(ctx.curves):
        u = ctx.warp_values(nu, w, idx)
        phi = ctx.spec.basis.design_matrix(np.clip(u, 0.0, 1.0))
        fac = ctx.amp_factors[curve.grid_key]
        wphi = fac.solve(phi)
        a += phi.T @ wphi
        b += wphi.T @ curve.values
        per_curve.append((phi, wphi))
    return a, b, per_curve


def estimate_theta(
    dataset: ConditionDataset,
    spec: ModelSpec,
    warps: tuple[np.ndarray, np.ndarray],
    _ctx: _Context | None = None,
) -> np.ndarray:
    """GLS estimate of the common template coefficients at fixed warps.

    Solves (Phi^T (I+S)^{-1} Phi) c = Phi^T (I+S)^{-1} y blockwise over
    curves, where Phi stacks basis evaluations at the warped times.
    """
    ctx = _ctx or _Context(dataset, spec)
    nu, w = warps
    a, b, _ = _theta_system(ctx, nu, w)
    return _solve_normal_equations(a, b, "the common template")


def estimate_phi(
    dataset: ConditionDataset,
    spec: ModelSpec,
    warps: tuple[np.ndarray, np.ndarray],
    coefficients: np.ndarray,
    _ctx: _Context | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Ridge GLS estimate of participant deviations, recentered to sum to zero.

    Each participant solves
    (Phi_i^T (I+S_i)^{-1} Phi_i + eta I) d_i = Phi_i^T (I+S_i)^{-1} (y_i - Phi_i c)
    with eta = penalty / (1 + amplitude scale); the mean deviation is then
    moved into the returned copy of the common coefficients so that
    sum_i d_i = 0 exactly.

    Returns
    -------
    (deviations, coefficients) : tuple of arrays
        Deviations of shape (n_participants, n_basis) and the adjusted
        common coefficients.
    """
    ctx = _ctx or _Context(dataset, spec)
    nu, w = warps
    k = ctx.spec.basis.n_basis
    eta = ctx.ridge
    d = np.zeros((len(ctx.participants), k))
    for i, curve_ids in enumerate(ctx.per_participant):
        a = np.zeros((k, k))
        b = np.zeros(k)
        for idx in curve_ids:
            curve = ctx.curves[idx]
            u = ctx.warp_values(nu, w, idx)
            phi = ctx.spec.basis.design_matrix(np.clip(u, 0.0, 1.0))
            fac = ctx.amp_factors[curve.grid_key]
            wphi = fac.solve(phi)
            a += phi.T @ wphi
            b += wphi.T @ (curve.values - phi @ coefficients)
        d[i] = _solve_normal_equations(
            a + eta * np.eye(k), b, f"participant {ctx.participants[i]!r}"
        )
    mean_dev = d.mean(axis=0)
    d -= mean_dev
    return d, coefficients + mean_dev


# ---------------------------------------------------------------------------
# Level 2: warp posterior and its optimization


def _posterior_parts(
    ctx: _Context,
    curve_ids: list[int],
    template: np.ndarray,
    nu_i: np.ndarray,
    w_i: np.ndarray,
    want_gradient: bool,
):
    """Posterior criterion for one participant; optionally its gradient."""
    prior = ctx.prior_factor
    value = 0.0
    grad_nu = np.zeros(ctx.n_w)
    grad_w = np.zeros((len(curve_ids), ctx.n_w))
    for row, idx in enumerate(curve_ids):
        curve = ctx.curves[idx]
        u = curve.base + curve.hat @ (nu_i + w_i[row])
        phi, dphi, inside = _design_at_warp(ctx.spec.basis, u)
        resid = curve.values - phi @ template
        fac = ctx.amp_factors[curve.grid_key]
        weighted = fac.solve(resid)
        value += float(resid @ weighted)
        pw = prior.solve(w_i[row])
        value += float(w_i[row] @ pw)
        if want_gradient:
            slope = (dphi @ template) * inside
            pull = -2.0 * (curve.hat.T @ (slope * weighted))
            grad_nu += pull
            grad_w[row] = pull + 2.0 * pw
    if want_gradient:
        return value, grad_nu, grad_w
    return value


def warp_posterior(
    dataset: ConditionDataset,
    spec: ModelSpec,
    participant: str,
    coefficients: np.ndarray,
    deviation: np.ndarray,
    nu_i: np.ndarray,
    w_i: np.ndarray,
    gradient: bool = False,
    _ctx: _Context | None = None,
):
    """Posterior criterion of one participant's warps given the templates.

    Sum over the participant's curves of the (I+S)-weighted squared residual
    of the warped template plus the C-weighted squared norm of each random
    shift.  With ``gradient=True`` also returns the analytic gradient with
    respect to (nu_i, w_i).
    """
    ctx = _ctx or _Context(dataset, spec)
    i = ctx.participants.index(participant)
    w_i = np.asarray(w_i, dtype=float)
    if w_i.shape != (len(ctx.per_participant[i]), ctx.n_w):
        raise ValueError(
            f"w_i must have shape {(len(ctx.per_participant[i]), ctx.n_w)}, "
            f"got {w_i.shape}"
        )
    template = coefficients + deviation
    out = _posterior_parts(ctx, ctx.per_participant[i], template, nu_i, w_i, gradient)
    return out


def _optimize_participant_warps(
    ctx: _Context,
    i: int,
    template: np.ndarray,
    nu_i: np.ndarray,
    w_i: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    curve_ids = ctx.per_participant[i]
    n_w = ctx.n_w
    n_curves = len(curve_ids)

    def objective(x: np.ndarray):
        nu = x[:n_w]
        w = x[n_w:].reshape(n_curves, n_w)
        value, g_nu, g_w = _posterior_parts(ctx, curve_ids, template, nu, w, True)
        return value, np.concatenate([g_nu, g_w.ravel()])

    x0 = np.concatenate([nu_i, w_i.ravel()])
    gap = ctx.spec.warp.min_gap
    bounds = [(gap, 1.0 - gap)] * n_w + [(-1.0, 1.0)] * (n_curves * n_w)
    res = bounded_minimize(
        objective, x0, bounds=bounds, jac=True, settings=ctx.spec.warp_optimizer
    )
    nu_new = res.x[:n_w]
    w_new = res.x[n_w:].reshape(n_curves, n_w)
    return nu_new, w_new, res.value


def optimize_warps(
    dataset: ConditionDataset,
    spec: ModelSpec,
    coefficients: np.ndarray,
    deviations: np.ndarray,
    warps: tuple[np.ndarray, np.ndarray],
    _ctx: _Context | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimize the warp posterior jointly over (nu_i, {w_ij}) per participant.

    Returns the updated warp state and the summed posterior value.  The
    optimizer never returns a point worse than its start, so the posterior is
    non-increasing step by step.
    """
    ctx = _ctx or _Context(dataset, spec)
    nu, w = warps
    nu_new = nu.copy()
    w_new = w.copy()
    total = 0.0
    for i in range(len(ctx.participants)):
        curve_ids = ctx.per_participant[i]
        template = coefficients + deviations[i]
        nu_i, w_i, value = _optimize_participant_warps(
            ctx, i, template, nu[i], w[curve_ids]
        )
        nu_new[i] = nu_i
        w_new[curve_ids] = w_i
        total += value
    return nu_new, w_new, total


def _joint_objective(ctx: _Context, c, d, nu, w) -> float:
    """Penalized joint criterion tracked across inner-loop steps."""
    total = 0.0
    for i in range(len(ctx.participants)):
        curve_ids = ctx.per_participant[i]
        total += _posterior_parts(ctx, curve_ids, c + d[i], nu[i], w[curve_ids], False)
    total += ctx.ridge * float(np.sum(d * d))
    return total


# ---------------------------------------------------------------------------
# Level 3: linearization and Laplace likelihood


@dataclass(frozen=True)
class LinearizedSystem:
    """Model linearized in the warp shifts around the current predictions.

    Per curve: the shifted residual r = y - mean + Z w0 and the sensitivity
    Z of the warped template to the shifts, so that r ~ N(0, sigma2 V) with
    V = S + Z C Z^T + I under the linearized model.
    """

    grid_keys: tuple[bytes, ...]
    times: dict
    residuals: tuple[np.ndarray, ...]
    sensitivities: tuple[np.ndarray, ...]
    total_points: int

    def blocks_by_grid(self):
        grouped: dict[bytes, list[int]] = {}
        for idx, key in enumerate(self.grid_keys):
            grouped.setdefault(key, []).append(idx)
        for key, ids in grouped.items():
            yield self.times[key], [self.residuals[i] for i in ids], [
                self.sensitivities[i] for i in ids
            ]


def linearize(
    dataset: ConditionDataset,
    spec: ModelSpec,
    coefficients: np.ndarray,
    deviations: np.ndarray,
    warps: tuple[np.ndarray, np.ndarray],
    _ctx: _Context | None = None,
) -> LinearizedSystem:
    """Linearize the warped-template model in w around the current warps."""
    ctx = _ctx or _Context(dataset, spec)
    nu, w = warps
    residuals = []
    sensitivities = []
    keys = []
    for idx, curve in enumerate(ctx.curves):
        template = coefficients + deviations[curve.participant]
        u = curve.base + curve.hat @ (nu[curve.participant] + w[idx])
        phi, dphi, inside = _design_at_warp(ctx.spec.basis, u)
        mean = phi @ template
        slope = (dphi @ template) * inside
        z = slope[:, None] * curve.hat
        residuals.append(curve.values - mean + z @ w[idx])
        sensitivities.append(z)
        keys.append(curve.grid_key)
    return LinearizedSystem(
        grid_keys=tuple(keys),
        times=dict(ctx.grids),
        residuals=tuple(residuals),
        sensitivities=tuple(sensitivities),
        total_points=ctx.total_points,
    )


def _batched_cholesky(mats: np.ndarray) -> np.ndarray:
    jitter = 0.0
    attempt = 1e-10
    scale = float(np.max(np.abs(np.diagonal(mats, axis1=-2, axis2=-1))))
    while True:
        try:
            if jitter:
                eye = np.eye(mats.shape[-1])
                return np.linalg.cholesky(mats + jitter * eye)
            return np.linalg.cholesky(mats)
        except np.linalg.LinAlgError:
            if attempt > 1e-6:
                raise NumericsError(
                    "marginal covariance blocks are not positive definite; "
                    "check variance parameter bounds"
                ) from None
            jitter = attempt * (scale if scale > 0 else 1.0)
            attempt *= 10.0


def _laplace_parts(
    system: LinearizedSystem,
    amplitude: MaternKernel | None,
    warp_prior,
    anchors: np.ndarray,
) -> tuple[float, float]:
    """(log-determinant, quadratic form) of the blockwise marginal covariance."""
    c_mat = warp_prior.matrix(anchors)
    logdet = 0.0
    quad = 0.0
    for times, residuals, sensitivities in system.blocks_by_grid():
        m = times.size
        base = np.eye(m) + (amplitude.matrix(times) if amplitude is not None else 0.0)
        z = np.stack(sensitivities)
        r = np.stack(residuals)
        v = base[None, :, :] + z @ c_mat @ np.transpose(z, (0, 2, 1))
        lower = _batched_cholesky(v)
        logdet += 2.0 * float(np.sum(np.log(np.diagonal(lower, axis1=-2, axis2=-1))))
        u = np.linalg.solve(lower, r[:, :, None])[:, :, 0]
        quad += float(np.sum(u * u))
    return logdet, quad


def laplace_nll(
    system: LinearizedSystem,
    sigma2: float,
    amplitude: MaternKernel | None,
    warp_prior,
    anchors: np.ndarray,
) -> float:
    """Laplace criterion m log sigma2 + log det V + |r|^2_V / sigma2.

    V = S + Z C Z^T + I blockwise per curve; equals the exact -2 log marginal
    density (up to the m log 2pi constant) whenever the warped template is
    affine in the shifts.
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    logdet, quad = _laplace_parts(system, amplitude, warp_prior, anchors)
    m = system.total_points
    return m * float(np.log(sigma2)) + logdet + quad / sigma2


def profiled_laplace_nll(
    system: LinearizedSystem,
    amplitude: MaternKernel | None,
    warp_prior,
    anchors: np.ndarray,
) -> tuple[float, float]:
    """Laplace criterion with the noise variance profiled out.

    Returns (criterion value, profiled sigma2); the profile solution is the
    V-weighted mean squared residual.
    """
    logdet, quad = _laplace_parts(system, amplitude, warp_prior, anchors)
    m = system.total_points
    sigma2 = max(quad / m, 1e-300)
    return m * float(np.log(sigma2)) + logdet + m, sigma2


# ---------------------------------------------------------------------------
# Variance parameter search


def _pack_log_params(spec: ModelSpec, amplitude, warp_prior) -> tuple[np.ndarray, list]:
    names = ["warp_scale"]
    values = [warp_prior.scale]
    if amplitude is not None:
        names += ["amp_scale", "inv_range"]
        values += [amplitude.scale, amplitude.inv_range]
        if spec.optimize_smoothness:
            names.append("smoothness")
            values.append(amplitude.smoothness)
    return np.log(values), names


def _unpack_log_params(
    x: np.ndarray, names: list, amplitude, warp_prior
):
    vals = dict(zip(names, np.exp(x)))
    prior = type(warp_prior)(scale=float(vals["warp_scale"]))
    amp = amplitude
    if amplitude is not None:
        amp = replace(
            amplitude,
            scale=float(vals["amp_scale"]),
            inv_range=float(vals["inv_range"]),
            smoothness=float(vals.get("smoothness", amplitude.smoothness)),
        )
    return amp, prior


def _estimate_variances(
    ctx: _Context, system: LinearizedSystem
) -> tuple[MaternKernel | None, object, float, float]:
    """Minimize the profiled Laplace criterion over the log variance params."""
    spec = ctx.spec
    anchors = spec.warp.anchors
    x0, names = _pack_log_params(spec, ctx.amplitude, ctx.warp_prior)
    bounds = [tuple(np.log(spec.bounds[n])) for n in names]

    def objective(x: np.ndarray) -> float:
        amp, prior = _unpack_log_params(x, names, ctx.amplitude, ctx.warp_prior)
        try:
            value, _ = profiled_laplace_nll(system, amp, prior, anchors)
        except NumericsError:
            return np.inf
        return value

    coarse = bounded_minimize(
        objective,
        x0,
        bounds=bounds,
        settings=OptimizerSettings(
            method="simplex",
            max_iterations=spec.variance_optimizer.max_iterations,
            step_tol=1e-6,
            value_tol=1e-9,
        ),
    )
    polish = bounded_minimize(
        objective, coarse.x, bounds=bounds, settings=OptimizerSettings(
            method="quasi-newton",
            max_iterations=spec.variance_optimizer.max_iterations,
        )
    )
    best = polish if polish.value <= coarse.value else coarse
    amp, prior = _unpack_log_params(best.x, names, ctx.amplitude, ctx.warp_prior)
    nll, sigma2 = profiled_laplace_nll(system, amp, prior, anchors)
    return amp, prior, sigma2, nll


# ---------------------------------------------------------------------------
# Fitted model container


@dataclass
class FittedModel:
    """Result of :func:`fit`: templates, warps, and variance parameters."""

    condition: str
    participants: tuple[str, ...]
    coefficients: np.ndarray
    deviations: np.ndarray
    warp_fixed: np.ndarray
    warp_random: np.ndarray
    curve_keys: tuple[tuple[str, int], ...]
    sigma2: float
    amplitude: MaternKernel | None
    warp_prior: object
    nll: float
    nll_trace: tuple[float, ...]
    posterior_traces: tuple[tuple[float, ...], ...]
    spec: ModelSpec
    version: str = __about__.__version__

    def participant_index(self, participant: str) -> int:
        try:
            return self.participants.index(participant)
        except ValueError:
            raise KeyError(f"unknown participant {participant!r}") from None

    def template_coefficients(self, participant: str | None = None) -> np.ndarray:
        if participant is None:
            return self.coefficients.copy()
        i = self.participant_index(participant)
        return self.coefficients + self.deviations[i]

    def common_template(self, times: np.ndarray) -> np.ndarray:
        """Common template on the warped-time scale."""
        return self.spec.basis.design_matrix(np.asarray(times, float)) @ self.coefficients

    def participant_warp(self, participant: str) -> np.ndarray:
        """Fixed warp anchor values, projected to a strict homeomorphism."""
        i = self.participant_index(participant)
        fixed, _, _ = enforce_homeomorphism(self.spec.warp, self.warp_fixed[i])
        return fixed

    def curve_warp(self, participant: str, repetition: int) -> tuple[np.ndarray, np.ndarray]:
        """Combined warp of one curve as (nodes, values), projected."""
        i = self.participant_index(participant)
        try:
            k = self.curve_keys.index((participant, repetition))
        except ValueError:
            raise KeyError(
                f"no curve for participant {participant!r}, repetition {repetition}"
            ) from None
        combined, _, _ = enforce_homeomorphism(
            self.spec.warp, self.warp_fixed[i] + self.warp_random[k]
        )
        nodes = self.spec.warp.nodes()
        return nodes, np.concatenate([[0.0], combined, [1.0]])

    def participant_template(self, participant: str, times: np.ndarray) -> np.ndarray:
        """Participant template in observed time: (theta+phi_i)(nu_i(t))."""
        i = self.participant_index(participant)
        warped = eval_warp(self.spec.warp, self.participant_warp(participant), None, times)
        phi = self.spec.basis.design_matrix(np.clip(warped, 0.0, 1.0))
        return phi @ (self.coefficients + self.deviations[i])

    def predict_curve(
        self, participant: str, repetition: int, times: np.ndarray
    ) -> np.ndarray:
        """Systematic part of one observed curve at the given times."""
        i = self.participant_index(participant)
        nodes, values = self.curve_warp(participant, repetition)
        warped = np.interp(np.asarray(times, float), nodes, values)
        phi = self.spec.basis.design_matrix(np.clip(warped, 0.0, 1.0))
        return phi @ (self.coefficients + self.deviations[i])

    def to_json(self) -> str:
        payload = {
            "condition": self.condition,
            "participants": list(self.participants),
            "coefficients": self.coefficients.tolist(),
            "deviations": self.deviations.tolist(),
            "warp_fixed": self.warp_fixed.tolist(),
            "warp_random": self.warp_random.tolist(),
            "curve_keys": [[p, r] for p, r in self.curve_keys],
            "sigma2": self.sigma2,
            "amplitude": _kernel_to_dict(self.amplitude),
            "warp_prior": _kernel_to_dict(self.warp_prior),
            "nll": self.nll,
            "nll_trace": list(self.nll_trace),
            "posterior_traces": [list(t) for t in self.posterior_traces],
            "spec": spec_to_dict(self.spec),
            "version": self.version,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        raw = json.loads(text)
        spec = spec_from_dict(raw["spec"])
        return cls(
            condition=raw["condition"],
            participants=tuple(raw["participants"]),
            coefficients=np.array(raw["coefficients"]),
            deviations=np.array(raw["deviations"]),
            warp_fixed=np.array(raw["warp_fixed"]),
            warp_random=np.array(raw["warp_random"]),
            curve_keys=tuple((p, int(r)) for p, r in raw["curve_keys"]),
            sigma2=float(raw["sigma2"]),
            amplitude=_kernel_from_dict(raw["amplitude"]),
            warp_prior=_kernel_from_dict(raw["warp_prior"]),
            nll=float(raw["nll"]),
            nll_trace=tuple(raw["nll_trace"]),
            posterior_traces=tuple(tuple(t) for t in raw["posterior_traces"]),
            spec=spec,
            version=raw.get("version", __about__.__version__),
        )


def _kernel_to_dict(kernel) -> dict | None:
    if kernel is None:
        return None
    if isinstance(kernel, MaternKernel):
        return {
            "type": "matern",
            "scale": kernel.scale,
            "inv_range": kernel.inv_range,
            "smoothness": kernel.smoothness,
        }
    if isinstance(kernel, BridgeKernel):
        return {"type": "bridge", "scale": kernel.scale}
    if isinstance(kernel, MotionKernel):
        return {"type": "motion", "scale": kernel.scale}
    raise TypeError(f"cannot serialize kernel {kernel!r}")


def _kernel_from_dict(raw: dict | None):
    if raw is None:
        return None
    kind = raw["type"]
    if kind == "matern":
        return MaternKernel(
            scale=raw["scale"], inv_range=raw["inv_range"], smoothness=raw["smoothness"]
        )
    if kind == "bridge":
        return BridgeKernel(scale=raw["scale"])
    if kind == "motion":
        return MotionKernel(scale=raw["scale"])
    raise ValueError(f"unknown kernel type {kind!r}")


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "basis": {
            "n_basis": spec.basis.n_basis,
            "degree": spec.basis.degree,
            "intercept": spec.basis.intercept,
        },
        "warp": {
            "n_anchors": spec.warp.n_anchors,
            "interpolation": spec.warp.interpolation,
            "min_gap": spec.warp.min_gap,
        },
        "amplitude": _kernel_to_dict(spec.amplitude),
        "warp_prior": _kernel_to_dict(spec.warp_prior),
        "penalty": spec.penalty,
        "outer_iterations": spec.outer_iterations,
        "inner_iterations": spec.inner_iterations,
        "inner_tol": spec.inner_tol,
        "optimize_smoothness": spec.optimize_smoothness,
        "bounds": {k: list(v) for k, v in spec.bounds.items()},
    }


def spec_from_dict(raw: dict) -> ModelSpec:
    return ModelSpec(
        basis=SplineBasis(
            n_basis=raw["basis"]["n_basis"],
            degree=raw["basis"]["degree"],
            intercept=raw["basis"]["intercept"],
        ),
        warp=WarpConfig(
            n_anchors=raw["warp"]["n_anchors"],
            interpolation=raw["warp"]["interpolation"],
            min_gap=raw["warp"]["min_gap"],
        ),
        amplitude=_kernel_from_dict(raw["amplitude"]),
        warp_prior=_kernel_from_dict(raw["warp_prior"]),
        penalty=raw["penalty"],
        outer_iterations=raw["outer_iterations"],
        inner_iterations=raw["inner_iterations"],
        inner_tol=raw["inner_tol"],
        optimize_smoothness=raw["optimize_smoothness"],
        bounds={k: tuple(v) for k, v in raw["bounds"].items()},
    )


# ---------------------------------------------------------------------------
# The full estimation loop


def fit(dataset: ConditionDataset, spec: ModelSpec) -> FittedModel:
    """Fit the warped mixed-effects model by alternating estimation.

    The inner loop alternates warp prediction and template re-estimation
    until the warps stop moving; the outer loop then re-estimates the
    variance parameters from the Laplace criterion of the linearized model.
    If a variance update fails to lower the criterion (its value is tracked
    across outer iterations), the previous state is restored and iteration
    stops; the recorded trace is therefore non-increasing.
    """
    ctx = _Context(dataset, spec)
    nu, w = ctx.identity_state()
    c = estimate_theta(dataset, spec, (nu, w), _ctx=ctx)
    d, c = estimate_phi(dataset, spec, (nu, w), c, _ctx=ctx)

    nll_trace: list[float] = []
    posterior_traces: list[tuple[float, ...]] = []
    best: dict | None = None
    sigma2 = float("nan")

    for _ in range(spec.outer_iterations):
        inner_trace: list[float] = []
        for _ in range(spec.inner_iterations):
            nu_new, w_new, _ = optimize_warps(dataset, spec, c, d, (nu, w), _ctx=ctx)
            delta = max(
                float(np.max(np.abs(nu_new - nu))), float(np.max(np.abs(w_new - w)))
            )
            nu, w = nu_new, w_new
            inner_trace.append(_joint_objective(ctx, c, d, nu, w))
            if delta < spec.inner_tol:
                break
            c = estimate_theta(dataset, spec, (nu, w), _ctx=ctx)
            d, c = estimate_phi(dataset, spec, (nu, w), c, _ctx=ctx)
            inner_trace.append(_joint_objective(ctx, c, d, nu, w))
        posterior_traces.append(tuple(inner_trace))

        system = linearize(dataset, spec, c, d, (nu, w), _ctx=ctx)
        amp, prior, sigma2_new, nll = _estimate_variances(ctx, system)
        if best is not None and nll > best["nll"] + 1e-9:
            c = best["c"]
            d = best["d"]
            nu = best["nu"]
            w = best["w"]
            sigma2 = best["sigma2"]
            ctx.set_kernels(best["amplitude"], best["warp_prior"])
            posterior_traces.pop()
            break
        sigma2 = sigma2_new
        ctx.set_kernels(amp, prior)
        nll_trace.append(nll)
        best = {
            "nll": nll,
            "c": c.copy(),
            "d": d.copy(),
            "nu": nu.copy(),
            "w": w.copy(),
            "sigma2": sigma2,
            "amplitude": amp,
            "warp_prior": prior,
        }

    curve_keys = tuple(
        (ctx.participants[curve.participant], curve.repetition) for curve in ctx.curves
    )
    return FittedModel(
        condition=dataset.conditions[0],
        participants=ctx.participants,
        coefficients=c,
        deviations=d,
        warp_fixed=nu,
        warp_random=w,
        curve_keys=curve_keys,
        sigma2=sigma2,
        amplitude=ctx.amplitude,
        warp_prior=ctx.warp_prior,
        nll=nll_trace[-1] if nll_trace else float("nan"),
        nll_trace=tuple(nll_trace),
        posterior_traces=tuple(posterior_traces),
        spec=spec,
    )


# ---------------------------------------------------------------------------
# Posterior distance of a new curve to a fitted participant


def posterior_distance(
    sample: FunctionalSample,
    fitted: FittedModel,
    participant: str,
) -> float:
    """Minimized warp posterior of a new curve against one participant.

    Holds the participant's fixed warp and template from the fit, predicts a
    fresh random warp shift for the test curve, and returns the minimized
    criterion (weighted residual plus shift prior).  A curve equal to the
    participant template at identity shift scores near zero.
    """
    spec = fitted.spec
    i = fitted.participant_index(participant)
    template = fitted.coefficients + fitted.deviations[i]
    nu_i = fitted.warp_fixed[i]
    times = sample.times
    hat = warp_jacobian(spec.warp, times)
    base = eval_warp(spec.warp, np.zeros(spec.warp.n_anchors), None, times)
    eye = np.eye(times.size)
    amp_fac = SpdFactor(
        eye + (fitted.amplitude.matrix(times) if fitted.amplitude is not None else 0.0)
    )
    prior_fac = SpdFactor(fitted.warp_prior.matrix(spec.warp.anchors))

    def objective(w: np.ndarray):
        u = base + hat @ (nu_i + w)
        phi, dphi, inside = _design_at_warp(spec.basis, u)
        resid = sample.values - phi @ template
        weighted = amp_fac.solve(resid)
        pw = prior_fac.solve(w)
        value = float(resid @ weighted) + float(w @ pw)
        slope = (dphi @ template) * inside
        grad = -2.0 * (hat.T @ (slope * weighted)) + 2.0 * pw
        return value, grad

    res = bounded_minimize(
        objective,
        np.zeros(spec.warp.n_anchors),
        bounds=[(-1.0, 1.0)] * spec.warp.n_anchors,
        jac=True,
        settings=spec.warp_optimizer,
    )
    return res.value
