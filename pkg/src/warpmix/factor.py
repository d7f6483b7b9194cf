"""Latent factor analysis of aligned 3-D movement paths.

Each curve is a 30x3 path tensor.  Deviations from a reference mean path are
modeled through q orthonormal loading directions whose weights carry a
three-level random-effects structure plus a height fixed effect:

    vec(y_ijh) = vec(theta) + W (beta^T X_h + sum_l z_{i, g_l(j,h), l}) + eps

with z_(.,l) ~ N(0, Psi_l) for l = participant, participant-by-height,
repetition, and eps having one noise variance per coordinate repeated over
the 30 time steps.  Fitting is maximum likelihood by ECM (closed-form
conditional updates for beta, W, each Psi_l, and the noise variances), with
optional squared-extrapolation (SQUAREM) acceleration guarded by a
log-likelihood fallback.  Identifiability is restored after convergence by
rotating to orthonormal W with sum_l Psi_l diagonal and descending.

The per-participant E-step works in the blocked latent space: with incidence
matrix A (curves x blocks) and G = W^T Lambda^{-1} W, the posterior precision
is blockdiag(Psi_l^{-1}) + kron(A^T A, G), and the marginal likelihood comes
from the matrix determinant lemma, so nothing larger than the per-participant
latent dimension is ever factorized.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import RawTrajectory
from .basis import SplineBasis
from .errors import ConfigError, DataError, NumericsError
from .kernels import SpdFactor
from .numerics import chi2_cdf, chi2_quantile

TIME_POINTS = 30
COORDS = 3
LEVEL_NAMES = ("participant", "participant_height", "repetition")
_SPLINE_INTERIOR_KNOTS = 10


# ---------------------------------------------------------------------------
# Data containers


@dataclass(frozen=True)
class PathTensor:
    """One aligned movement path: 30 time steps by 3 coordinates."""

    values: np.ndarray
    participant: str
    repetition: int
    height: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (TIME_POINTS, COORDS):
            raise DataError(
                f"path tensor must be {TIME_POINTS}x{COORDS}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("path tensor has non-finite entries")
        if self.height < 1:
            raise DataError(f"height level must be positive, got {self.height}")


@dataclass(frozen=True)
class FactorDesign:
    """Height fixed-effect design.

    ``kind="anova"`` uses one free contrast per non-reference height
    (rows (0,0), (1,0), (0,1) for three levels); ``kind="regression"``
    uses a single linear term in the physical height above the reference
    (rows 0, 7.5, 15 by default).  The regression design is nested in the
    ANOVA design.
    """

    kind: str = "anova"
    height_values: tuple = (0.0, 7.5, 15.0)

    def __post_init__(self) -> None:
        if self.kind not in ("anova", "regression"):
            raise ConfigError(f"unknown design kind {self.kind!r}")
        if len(self.height_values) < 2:
            raise ConfigError("need at least two height levels")

    @property
    def n_levels(self) -> int:
        return len(self.height_values)

    @property
    def dim(self) -> int:
        return self.n_levels - 1 if self.kind == "anova" else 1

    def row(self, height: int) -> np.ndarray:
        if not 1 <= height <= self.n_levels:
            raise DataError(
                f"height level {height} outside 1..{self.n_levels}"
            )
        if self.kind == "anova":
            out = np.zeros(self.dim)
            if height > 1:
                out[height - 2] = 1.0
            return out
        return np.array([self.height_values[height - 1] - self.height_values[0]])

    def nesting_map(self) -> np.ndarray:
        """T with beta_anova = T @ beta_regression reproducing the same means."""
        offsets = np.asarray(self.height_values[1:]) - self.height_values[0]
        return offsets[:, None]


# ---------------------------------------------------------------------------
# Path resampling under a fitted warp


def resample_path(traj: RawTrajectory, warp=None) -> np.ndarray:
    """Evaluate a path at the 30 preimages of equidistant warped times.

    Each coordinate is smoothed by a cubic least-squares spline with 10
    equidistant interior knots over the trajectory's own [0, 1] time scale;
    the spline is then read at the times whose images under the piecewise
    linear ``warp`` (a ``(nodes, values)`` pair, identity when None) are the
    30 equidistant points of warped time.
    """
    if traj.coords is None:
        raise ValueError(f"trajectory {traj.label()} has no coordinates")
    t = (traj.times - traj.times[0]) / (traj.times[-1] - traj.times[0])
    basis = SplineBasis(_SPLINE_INTERIOR_KNOTS + 4)
    design = basis.design_matrix(t)
    coef, _, rank, _ = np.linalg.lstsq(design, traj.coords, rcond=None)
    if rank < basis.n_basis:
        raise DataError(
            f"trajectory {traj.label()} has too few points for the "
            f"{basis.n_basis}-function resampling spline"
        )
    warped_grid = np.linspace(0.0, 1.0, TIME_POINTS)
    if warp is None:
        preimages = warped_grid
    else:
        nodes, values = warp
        preimages = np.interp(warped_grid, values, nodes)
    return basis.design_matrix(preimages) @ coef


# ---------------------------------------------------------------------------
# Fitted model container


@dataclass
class FactorModel:
    """Maximum likelihood factor model for one obstacle distance."""

    theta: np.ndarray
    loadings: np.ndarray
    beta: np.ndarray
    psis: tuple
    lambdas: np.ndarray
    q: int
    design: FactorDesign
    loglik: float
    ll_trace: tuple
    n_sweeps: int
    converged: bool
    participants: tuple
    n_curves: int
    data_checksum: float

    def level_covariance(self, levels=LEVEL_NAMES) -> np.ndarray:
        """Sum of Psi_l over the named levels (q x q)."""
        out = np.zeros((self.q, self.q))
        for name in levels:
            out += self.psis[LEVEL_NAMES.index(name)]
        return out

    def time_covariance(
        self, time_index: int, levels=LEVEL_NAMES, include_noise: bool = True
    ) -> np.ndarray:
        """3x3 covariance of one time step's coordinates across new curves."""
        if not 0 <= time_index < TIME_POINTS:
            raise ValueError(f"time index {time_index} outside 0..{TIME_POINTS - 1}")
        rows = self.loadings[COORDS * time_index: COORDS * (time_index + 1)]
        cov = rows @ self.level_covariance(levels) @ rows.T
        if include_noise:
            cov = cov + np.diag(self.lambdas)
        return cov

    def mean_path(self, height: int) -> np.ndarray:
        """Model mean path at one height level, as 30x3."""
        shift = self.loadings @ (self.beta.T @ self.design.row(height))
        return self.theta + shift.reshape(TIME_POINTS, COORDS)

    def to_json(self) -> str:
        payload = {
            "theta": self.theta.tolist(),
            "loadings": self.loadings.tolist(),
            "beta": self.beta.tolist(),
            "psis": [p.tolist() for p in self.psis],
            "lambdas": self.lambdas.tolist(),
            "q": self.q,
            "design": {"kind": self.design.kind,
                       "height_values": list(self.design.height_values)},
            "loglik": self.loglik,
            "ll_trace": list(self.ll_trace),
            "n_sweeps": self.n_sweeps,
            "converged": self.converged,
            "participants": list(self.participants),
            "n_curves": self.n_curves,
            "data_checksum": self.data_checksum,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FactorModel":
        raw = json.loads(text)
        return cls(
            theta=np.array(raw["theta"]),
            loadings=np.array(raw["loadings"]),
            beta=np.array(raw["beta"]),
            psis=tuple(np.array(p) for p in raw["psis"]),
            lambdas=np.array(raw["lambdas"]),
            q=int(raw["q"]),
            design=FactorDesign(
                kind=raw["design"]["kind"],
                height_values=tuple(raw["design"]["height_values"]),
            ),
            loglik=float(raw["loglik"]),
            ll_trace=tuple(raw["ll_trace"]),
            n_sweeps=int(raw["n_sweeps"]),
            converged=bool(raw["converged"]),
            participants=tuple(raw["participants"]),
            n_curves=int(raw["n_curves"]),
            data_checksum=float(raw["data_checksum"]),
        )


# ---------------------------------------------------------------------------
# Internal: blocked per-participant structure


class _Blocks:
    """Latent block layout of one participant: one participant block, one
    block per height present, one block per curve."""

    def __init__(self, tensors: list):
        self.tensors = tensors
        heights = sorted({p.height for p in tensors})
        self.n_blocks = 1 + len(heights) + len(tensors)
        self.levels = np.array(
            [0] + [1] * len(heights) + [2] * len(tensors), dtype=int
        )
        height_block = {h: 1 + k for k, h in enumerate(heights)}
        self.incidence = np.zeros((len(tensors), self.n_blocks))
        for c, p in enumerate(tensors):
            self.incidence[c, 0] = 1.0
            self.incidence[c, height_block[p.height]] = 1.0
            self.incidence[c, 1 + len(heights) + c] = 1.0
        self.counts = self.incidence.T @ self.incidence


class _FactorData:
    def __init__(self, data: list, design: FactorDesign):
        if not data:
            raise DataError("no path tensors to fit")
        data = sorted(data, key=lambda p: (p.participant, p.height, p.repetition))
        self.participants = tuple(sorted({p.participant for p in data}))
        self.blocks = [
            _Blocks([p for p in data if p.participant == i])
            for i in self.participants
        ]
        reference = min(p.height for p in data)
        ref_stack = np.stack([p.values for p in data if p.height == reference])
        self.theta = ref_stack.mean(axis=0)
        theta_vec = self.theta.ravel()
        self.n_curves = len(data)
        self.checksum = float(np.sum([np.sum(p.values) for p in data]))
        # centered observations and design rows, grouped by participant
        self.y = [
            np.stack([p.values.ravel() - theta_vec for p in b.tensors])
            for b in self.blocks
        ]
        self.x = [
            np.stack([design.row(p.height) for p in b.tensors])
            for b in self.blocks
        ]
        self.design = design


def _pack(beta, w, psis, lambdas):
    return np.concatenate(
        [beta.ravel(), w.ravel()]
        + [p.ravel() for p in psis]
        + [lambdas]
    )


def _unpack(x, p_dim, q):
    d = TIME_POINTS * COORDS
    beta, x = x[: p_dim * q].reshape(p_dim, q), x[p_dim * q:]
    w, x = x[: d * q].reshape(d, q), x[d * q:]
    psis = []
    for _ in range(3):
        psi, x = x[: q * q].reshape(q, q), x[q * q:]
        psis.append(0.5 * (psi + psi.T))
    lambdas = x
    return beta, w, tuple(psis), lambdas


def _params_valid(beta, w, psis, lambdas) -> bool:
    if not np.all(np.isfinite(beta)) or not np.all(np.isfinite(w)):
        return False
    if np.any(lambdas <= 0) or not np.all(np.isfinite(lambdas)):
        return False
    for psi in psis:
        if not np.all(np.isfinite(psi)):
            return False
        if np.linalg.eigvalsh(psi).min() <= 0:
            return False
    return True


def _participant_estep(y, x, blocks, beta, w, psis, lambdas, want_moments):
    """Log-likelihood of one participant; optionally posterior moments."""
    q = w.shape[1]
    lam_big = np.tile(lambdas, TIME_POINTS)
    inv_lam = 1.0 / lam_big
    g = (w * inv_lam[:, None]).T @ w
    resid = y - (x @ beta) @ w.T
    h = resid @ (w * inv_lam[:, None])
    b = (blocks.incidence.T @ h).ravel()

    psi_factors = [SpdFactor(p) for p in psis]
    prec = np.kron(blocks.counts, g)
    logdet_prior = 0.0
    for k, level in enumerate(blocks.levels):
        fac = psi_factors[level]
        prec[k * q:(k + 1) * q, k * q:(k + 1) * q] += fac.solve(np.eye(q))
        logdet_prior += fac.logdet()
    prec_factor = SpdFactor(prec)

    n_curves = y.shape[0]
    m = n_curves * TIME_POINTS * COORDS
    quad = float(np.sum(resid * resid * inv_lam[None, :]))
    quad -= prec_factor.quad_form(b)
    logdet = (
        n_curves * TIME_POINTS * float(np.sum(np.log(lambdas)))
        + logdet_prior
        + prec_factor.logdet()
    )
    ll = -0.5 * (m * np.log(2.0 * np.pi) + logdet + quad)
    if not want_moments:
        return ll, None
    cov = prec_factor.solve(np.eye(blocks.n_blocks * q))
    mean = cov @ b
    return ll, (mean.reshape(blocks.n_blocks, q), cov)


def _loglik(data: _FactorData, beta, w, psis, lambdas) -> float:
    total = 0.0
    for y, x, blocks in zip(data.y, data.x, data.blocks):
        ll, _ = _participant_estep(y, x, blocks, beta, w, psis, lambdas, False)
        total += ll
    return total


def _ecm_sweep(data: _FactorData, beta, w, psis, lambdas):
    """One ECM sweep; returns updated parameters and the log-likelihood at
    the input parameters (a free byproduct of the E-step)."""
    q = w.shape[1]
    d = TIME_POINTS * COORDS
    p_dim = beta.shape[0]
    lam_big = np.tile(lambdas, TIME_POINTS)
    inv_lam = 1.0 / lam_big
    g = (w * inv_lam[:, None]).T @ w

    ll_in = 0.0
    posterior = []
    for y, x, blocks in zip(data.y, data.x, data.blocks):
        ll, moments = _participant_estep(
            y, x, blocks, beta, w, psis, lambdas, True
        )
        ll_in += ll
        posterior.append(moments)

    # Per-curve first and second posterior moments of the latent sum a_c,
    # which do not depend on beta or W and survive all CM steps below.
    a_means, a_covs = [], []
    for (mean, cov), blocks in zip(posterior, data.blocks):
        inc = blocks.incidence
        a_means.append(inc @ mean)
        ex = np.kron(inc, np.eye(q))
        per_curve = ex @ cov @ ex.T
        a_covs.append(
            np.stack([
                per_curve[c * q:(c + 1) * q, c * q:(c + 1) * q]
                for c in range(inc.shape[0])
            ])
        )

    # CM step 1: beta, given W and the noise variances.
    lhs = np.zeros((p_dim, p_dim))
    rhs = np.zeros((p_dim, q))
    for y, x, a_mean in zip(data.y, data.x, a_means):
        h0 = y @ (w * inv_lam[:, None])
        lhs += x.T @ x
        rhs += x.T @ (h0 - a_mean @ g.T)
    beta = np.linalg.solve(g, np.linalg.solve(lhs, rhs).T).T

    # CM step 2: W unconstrained, given the new beta.
    s_yt = np.zeros((d, q))
    s_tt = np.zeros((q, q))
    t_means = []
    for y, x, a_mean, a_cov in zip(data.y, data.x, a_means, a_covs):
        t_mean = x @ beta + a_mean
        t_means.append(t_mean)
        s_yt += y.T @ t_mean
        s_tt += t_mean.T @ t_mean + a_cov.sum(axis=0)
    w_new = np.linalg.solve(s_tt, s_yt.T).T

    # Reparametrize to orthonormal W; the triangular factor moves into the
    # latent coordinates, so the posterior moments transform along.
    q_mat, r_mat = np.linalg.qr(w_new)
    signs = np.sign(np.diag(r_mat))
    signs[signs == 0] = 1.0
    w = q_mat * signs
    r_mat = r_mat * signs[:, None]
    beta = beta @ r_mat.T
    t_means = [t @ r_mat.T for t in t_means]
    a_covs = [np.einsum("ij,cjk,lk->cil", r_mat, cov, r_mat) for cov in a_covs]

    # CM step 3: one Psi per level, from the transformed block moments.
    psi_sums = [np.zeros((q, q)) for _ in range(3)]
    psi_counts = [0] * 3
    for (mean, cov), blocks in zip(posterior, data.blocks):
        mean_r = mean @ r_mat.T
        for k, level in enumerate(blocks.levels):
            block_cov = r_mat @ cov[k * q:(k + 1) * q, k * q:(k + 1) * q] @ r_mat.T
            psi_sums[level] += block_cov + np.outer(mean_r[k], mean_r[k])
            psi_counts[level] += 1
    psis = tuple(
        0.5 * (s / n + (s / n).T) for s, n in zip(psi_sums, psi_counts)
    )

    # CM step 4: noise variances, one per coordinate.
    sq_sums = np.zeros(d)
    for y, t_mean, a_cov in zip(data.y, t_means, a_covs):
        e = y - t_mean @ w.T
        sq_sums += np.sum(e * e, axis=0)
        total_cov = a_cov.sum(axis=0)
        sq_sums += np.sum((w @ total_cov) * w, axis=1)
    lambdas = sq_sums.reshape(TIME_POINTS, COORDS).sum(axis=0)
    lambdas = lambdas / (data.n_curves * TIME_POINTS)

    return beta, w, psis, lambdas, ll_in


def _initial_parameters(data: _FactorData, q: int):
    deviations = np.vstack(data.y)
    _, _, vt = np.linalg.svd(deviations, full_matrices=False)
    if vt.shape[0] < q:
        raise ConfigError(
            f"q={q} exceeds the rank of the centered data ({vt.shape[0]})"
        )
    w = vt[:q].T
    scores = deviations @ w
    x_all = np.vstack(data.x)
    beta, *_ = np.linalg.lstsq(x_all, scores, rcond=None)
    resid = deviations - scores @ w.T
    lambdas = resid.reshape(-1, TIME_POINTS, COORDS).var(axis=(0, 1))
    lambdas = np.maximum(lambdas, 1e-8)
    psis = tuple(0.1 * np.eye(q) for _ in range(3))
    return beta, w, psis, lambdas


_MAX_EXTRAPOLATION = 15.0


def squarem_step(fixed_point_map, x: np.ndarray, objective) -> np.ndarray:
    """One squared-extrapolation acceleration step of a fixed-point map.

    Computes r = F(x) - x and v = F(F(x)) - F(x) - r, extrapolates with step
    alpha = -|r|/|v| clamped to [-(1 + max extrapolation), -1], and returns
    the extrapolated point unless it lowers ``objective`` (higher is better)
    or leaves the feasible region (objective returns non-finite), in which
    case F(F(x)) is returned; monotonicity is therefore unconditional.
    """
    x1 = fixed_point_map(x)
    x2 = fixed_point_map(x1)
    r = x1 - x
    v = x2 - x1 - r
    norm_v = float(np.linalg.norm(v))
    if norm_v < 1e-14:
        return x2
    alpha = -float(np.linalg.norm(r)) / norm_v
    alpha = min(-1.0, max(alpha, -(1.0 + _MAX_EXTRAPOLATION)))
    x_acc = x - 2.0 * alpha * r + alpha * alpha * v
    base = objective(x1)
    try:
        value = objective(x_acc)
    except (NumericsError, np.linalg.LinAlgError):
        return x2
    if np.isfinite(value) and value >= base:
        return x_acc
    return x2


def fit_factor(
    data,
    q: int,
    design: FactorDesign | None = None,
    accelerate: bool = True,
    max_sweeps: int = 5000,
    tol: float = 1e-9,
    init: dict | None = None,
) -> FactorModel:
    """Fit the loadings model by ECM, optionally SQUAREM-accelerated.

    ``init`` may carry ``beta``, ``loadings``, ``psis``, ``lambdas`` to warm
    start (all required together); otherwise the start is the top-q singular
    subspace of the centered deviations.  The recorded likelihood trace is
    non-decreasing; non-convergence within ``max_sweeps`` raises a warning
    and returns the last iterate.
    """
    design = design or FactorDesign()
    ctx = _FactorData(list(data), design)
    d = TIME_POINTS * COORDS
    if not 1 <= q <= min(d, ctx.n_curves):
        raise ConfigError(
            f"q={q} outside 1..{min(d, ctx.n_curves)} for {ctx.n_curves} curves"
        )
    if init is not None:
        beta = np.array(init["beta"], dtype=float)
        w = np.array(init["loadings"], dtype=float)
        psis = tuple(np.array(p, dtype=float) for p in init["psis"])
        lambdas = np.array(init["lambdas"], dtype=float)
        if beta.shape != (design.dim, q) or w.shape != (d, q):
            raise ConfigError("warm start shapes do not match the design and q")
    else:
        beta, w, psis, lambdas = _initial_parameters(ctx, q)
    p_dim = design.dim

    def sweep_with_ll(packed: np.ndarray):
        b, wm, ps, lam = _unpack(packed, p_dim, q)
        b, wm, ps, lam, ll_in = _ecm_sweep(ctx, b, wm, ps, lam)
        return _pack(b, wm, ps, lam), ll_in

    # The E-step yields the likelihood at its input for free, so the trace
    # records visited points one sweep in arrears.  A sweep is one ECM pass;
    # standalone likelihood evaluations for the acceleration guard count too.
    trace: list[float] = []
    x = _pack(beta, w, psis, lambdas)
    converged = False
    n_sweeps = 0
    while n_sweeps < max_sweeps and not converged:
        if accelerate:
            x0 = x
            x1, ll_x = sweep_with_ll(x0)
            x2, ll_x1 = sweep_with_ll(x1)
            n_sweeps += 2
            trace += [ll_x, ll_x1]
            r = x1 - x0
            v = x2 - x1 - r
            norm_v = float(np.linalg.norm(v))
            x = x2
            if norm_v >= 1e-14:
                alpha = -float(np.linalg.norm(r)) / norm_v
                alpha = min(-1.0, max(alpha, -(1.0 + _MAX_EXTRAPOLATION)))
                x_acc = x0 - 2.0 * alpha * r + alpha * alpha * v
                b, wm, ps, lam = _unpack(x_acc, p_dim, q)
                if _params_valid(b, wm, ps, lam):
                    try:
                        ll_acc = _loglik(ctx, b, wm, ps, lam)
                    except NumericsError:
                        ll_acc = -np.inf
                    n_sweeps += 1
                    if np.isfinite(ll_acc) and ll_acc >= ll_x1:
                        x = x_acc
            if abs(ll_x1 - ll_x) < tol * (abs(ll_x) + 1.0):
                converged = True
        else:
            x_next, ll_x = sweep_with_ll(x)
            n_sweeps += 1
            trace.append(ll_x)
            x = x_next
            if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < tol * (
                abs(trace[-2]) + 1.0
            ):
                converged = True
    if not converged:
        warnings.warn(
            f"factor fit did not converge in {max_sweeps} sweeps",
            RuntimeWarning,
        )
    beta, w, psis, lambdas = _unpack(x, p_dim, q)
    beta, w, psis = _identify(beta, w, psis)
    loglik = _loglik(ctx, beta, w, psis, lambdas)
    return FactorModel(
        theta=ctx.theta,
        loadings=w,
        beta=beta,
        psis=psis,
        lambdas=lambdas,
        q=q,
        design=design,
        loglik=loglik,
        ll_trace=tuple(trace),
        n_sweeps=n_sweeps,
        converged=converged,
        participants=ctx.participants,
        n_curves=ctx.n_curves,
        data_checksum=ctx.checksum,
    )


def _identify(beta, w, psis):
    """Move to the identified representation: W orthonormal, sum of Psi_l
    diagonal with descending entries, and the largest-magnitude entry of
    each loading positive.  The final iterate may be an extrapolated point,
    so orthonormality is restored first (a reparametrization that leaves
    the likelihood unchanged)."""
    q_mat, r_mat = np.linalg.qr(w)
    signs = np.sign(np.diag(r_mat))
    signs[signs == 0] = 1.0
    w = q_mat * signs
    r_mat = r_mat * signs[:, None]
    beta = beta @ r_mat.T
    psis = tuple(r_mat @ p @ r_mat.T for p in psis)
    total = sum(psis)
    eigvals, u = np.linalg.eigh(0.5 * (total + total.T))
    order = np.argsort(eigvals)[::-1]
    u = u[:, order]
    w = w @ u
    beta = beta @ u
    psis = tuple(u.T @ p @ u for p in psis)
    signs = np.array([
        1.0 if w[np.argmax(np.abs(w[:, k])), k] >= 0 else -1.0
        for k in range(w.shape[1])
    ])
    w = w * signs
    beta = beta * signs
    psis = tuple(p * np.outer(signs, signs) for p in psis)
    return beta, w, psis


# ---------------------------------------------------------------------------
# Inference and summaries


def fit_height_models(data, q: int, design: FactorDesign | None = None, **kw):
    """Fit the regression and ANOVA height designs with guaranteed nesting.

    The ANOVA fit is warm-started from the regression solution (through the
    nesting map) as well as from the default start, keeping the better
    likelihood, so its fitted likelihood cannot fall below the regression
    one beyond optimizer noise.
    """
    base = design or FactorDesign()
    reg_design = FactorDesign(kind="regression", height_values=base.height_values)
    anova_design = FactorDesign(kind="anova", height_values=base.height_values)
    regression = fit_factor(data, q, reg_design, **kw)
    warm = {
        "beta": reg_design.nesting_map() @ regression.beta,
        "loadings": regression.loadings,
        "psis": regression.psis,
        "lambdas": regression.lambdas,
    }
    anova = fit_factor(data, q, anova_design, init=warm, **kw)
    cold = fit_factor(data, q, anova_design, **kw)
    if cold.loglik > anova.loglik:
        anova = cold
    return anova, regression


def lrt_linear_height(anova_fit: FactorModel, regression_fit: FactorModel) -> float:
    """p-value of the likelihood-ratio test of linear height scaling.

    Twice the likelihood difference between the ANOVA and nested regression
    fits is referred to a chi-square law with q degrees of freedom (the
    ANOVA design has one extra q-vector of weights).
    """
    if anova_fit.design.kind != "anova" or regression_fit.design.kind != "regression":
        raise ConfigError(
            "expected an anova fit and a regression fit, got "
            f"{anova_fit.design.kind!r} and {regression_fit.design.kind!r}"
        )
    if anova_fit.q != regression_fit.q:
        raise ConfigError(
            f"fits have different q: {anova_fit.q} vs {regression_fit.q}"
        )
    if (anova_fit.n_curves != regression_fit.n_curves
            or anova_fit.data_checksum != regression_fit.data_checksum):
        raise ConfigError("fits are not on the same data")
    delta = 2.0 * (anova_fit.loglik - regression_fit.loglik)
    if delta < -1e-6:
        raise ConfigError(
            f"regression likelihood exceeds the anova likelihood by {-delta:.3e}; "
            "refit with fit_height_models to enforce nesting"
        )
    return 1.0 - chi2_cdf(max(delta, 0.0), anova_fit.q)


def variance_decomposition(model: FactorModel) -> dict:
    """Variance share of each random level and of the noise.

    Level l contributes trace(W Psi_l W^T); the noise contributes 30 times
    the summed per-coordinate variances.  Shares sum to one.
    """
    w = model.loadings
    latent = [float(np.trace(w @ psi @ w.T)) for psi in model.psis]
    noise = TIME_POINTS * float(np.sum(model.lambdas))
    total = sum(latent) + noise
    out = {name: part / total for name, part in zip(LEVEL_NAMES, latent)}
    out["noise"] = noise / total
    return out


def loading_shares(model: FactorModel) -> np.ndarray:
    """Per-loading share of total variance (scree data), descending."""
    w = model.loadings
    total_psi = model.level_covariance()
    per_loading = np.array([
        float(w[:, k] @ w[:, k]) * total_psi[k, k] for k in range(model.q)
    ])
    noise = TIME_POINTS * float(np.sum(model.lambdas))
    return per_loading / (float(np.sum(per_loading)) + noise)


def prediction_ellipsoid(cov3: np.ndarray, level: float = 0.95):
    """Axes and radii of the Gaussian prediction ellipsoid of a 3x3 covariance.

    Returns ``(axes, radii)`` with orthonormal axis columns and radii
    sqrt(eigenvalue times the chi-square(3) quantile at ``level``),
    descending.  Small negative eigenvalues (above -1e-8) are clamped to 0.
    """
    cov3 = np.asarray(cov3, dtype=float)
    if cov3.shape != (3, 3):
        raise ValueError(f"need a 3x3 covariance, got {cov3.shape}")
    sym = 0.5 * (cov3 + cov3.T)
    eigvals, axes = np.linalg.eigh(sym)
    if eigvals.min() < -1e-8:
        raise NumericsError(
            f"covariance has negative eigenvalue {eigvals.min():.3e}"
        )
    eigvals = np.clip(eigvals, 0.0, None)[::-1]
    axes = axes[:, ::-1]
    radii = np.sqrt(eigvals * chi2_quantile(level, 3))
    return axes, radii
