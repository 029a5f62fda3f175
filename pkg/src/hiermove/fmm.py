"""Functional movement model: cubic B-spline regression of position on
time with a two-component rotated-Gaussian measurement-error mixture,
fit by Gibbs sampling, and posterior-predictive path imputation.

The two coordinates share one basis but have independent coefficient
vectors; the coefficient update is a joint conjugate Gaussian draw because
the error covariance couples the coordinates within each observation.
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from .probdist import MixtureErrorParams, SpdFactor, substream

__all__ = [
    "BSplineBasis",
    "FmmState",
    "FmmFit",
    "PathDraws",
    "build_basis",
    "alpha_conditional",
    "fit_fmm",
    "impute_paths",
    "FunctionalMovementModel",
    "save_path_draws",
    "load_path_draws",
]


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis: the first and last knot are repeated
    degree + 1 times, so num_basis = #interior knots + degree + 1."""

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        kn = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", kn)
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if np.any(np.diff(kn) < 0):
            raise ValueError("knots must be nondecreasing")
        if kn.size < 2 * (self.degree + 1):
            raise ValueError("knot vector too short for the degree")

    @property
    def num_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def t_min(self) -> float:
        return float(self.knots[self.degree])

    @property
    def t_max(self) -> float:
        return float(self.knots[-self.degree - 1])

    @classmethod
    def uniform(cls, t_min: float, t_max: float, num_interior: int, degree: int = 3):
        if t_max <= t_min:
            raise ValueError("need t_max > t_min")
        interior = np.linspace(t_min, t_max, num_interior + 2)[1:-1]
        knots = np.concatenate(
            [np.full(degree + 1, t_min), interior, np.full(degree + 1, t_max)]
        )
        return cls(degree=degree, knots=knots)


def _basis_row(basis: BSplineBasis, t: float) -> np.ndarray:
    """One row of the design matrix by the Cox-de Boor recursion."""
    kn, d = basis.knots, basis.degree
    nb = basis.num_basis
    if t < basis.t_min or t > basis.t_max:
        raise ValueError(f"time {t} outside the basis range")
    # rightmost span treated as closed so t_max is representable
    if t == basis.t_max:
        span = nb - 1
        while span > d and kn[span] == kn[span + 1]:
            span -= 1
    else:
        span = int(np.searchsorted(kn, t, side="right") - 1)
        span = min(max(span, d), nb - 1)
    vals = np.zeros(d + 1)
    vals[0] = 1.0
    for deg in range(1, d + 1):
        saved = 0.0
        for r in range(deg):
            left = kn[span - deg + 1 + r]
            right = kn[span + 1 + r]
            denom = right - left
            term = vals[r] / denom if denom > 0 else 0.0
            vals[r] = saved + (right - t) * term
            saved = (t - left) * term
        vals[deg] = saved
    row = np.zeros(nb)
    row[span - d : span + 1] = vals
    return row


def build_basis(times, basis: BSplineBasis) -> np.ndarray:
    """Evaluate all basis functions at the given times; rows sum to one."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return np.vstack([_basis_row(basis, t) for t in times])


@dataclass
class FmmState:
    alpha_x: np.ndarray
    alpha_y: np.ndarray
    p: float
    z: np.ndarray
    sigma_alpha_sq: float
    error_cov: MixtureErrorParams


@dataclass(frozen=True)
class FmmFit:
    basis: BSplineBasis
    alpha_x: np.ndarray  # K x B
    alpha_y: np.ndarray  # K x B
    p: np.ndarray  # K
    error_cov: MixtureErrorParams

    @property
    def n_draws(self) -> int:
        return self.alpha_x.shape[0]


@dataclass(frozen=True)
class PathDraws:
    """Posterior-predictive path pool on a uniform fine time grid."""

    individual_id: str
    times: np.ndarray  # T, strictly increasing, uniform spacing
    draws: np.ndarray  # M x T x 2

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        d = np.asarray(self.draws, dtype=float)
        object.__setattr__(self, "draws", d)
        if d.ndim != 3 or d.shape[0] < 1 or d.shape[2] != 2:
            raise ValueError("draws must be M x T x 2 with M >= 1")
        if d.shape[1] != t.size:
            raise ValueError("draws and times disagree in length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite path draws")

    @property
    def n_paths(self) -> int:
        return self.draws.shape[0]


def _two_comp_logdens(resid: np.ndarray, cov: SpdFactor, scale: np.ndarray) -> np.ndarray:
    """Per-observation log N(resid | 0, scale_i * cov) for n x 2 residuals."""
    z = cov.whiten(resid) / np.sqrt(scale)[:, None]
    return -np.log(2 * np.pi) - 0.5 * (cov.log_det + 2 * np.log(scale)) - 0.5 * np.sum(z * z, axis=1)


def alpha_conditional(
    w: np.ndarray, obs: np.ndarray, omegas: np.ndarray, sigma_alpha_sq: float
) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate Gaussian conditional of the stacked coefficient vector
    (x block then y block) given per-observation 2x2 error precisions.

    Returns (mean, cholesky-of-precision); a draw is
    mean + solve(chol', z)."""
    a_i, b_i, d_i = omegas[:, 0, 0], omegas[:, 0, 1], omegas[:, 1, 1]
    p_xx = w.T @ (a_i[:, None] * w)
    p_xy = w.T @ (b_i[:, None] * w)
    p_yy = w.T @ (d_i[:, None] * w)
    prec = np.block([[p_xx, p_xy], [p_xy.T, p_yy]])
    prec[np.diag_indices_from(prec)] += 1.0 / sigma_alpha_sq
    rhs = np.concatenate(
        [
            w.T @ (a_i * obs[:, 0] + b_i * obs[:, 1]),
            w.T @ (b_i * obs[:, 0] + d_i * obs[:, 1]),
        ]
    )
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    return mean, chol


def fit_fmm(
    times,
    observations,
    basis: BSplineBasis,
    error: MixtureErrorParams,
    sigma_alpha_sq: float,
    iterations: int = 5_000,
    burnin: int = 1_000,
    rng: np.random.Generator | None = None,
    cov_scale=None,
) -> FmmFit:
    """Gibbs sampler for the spline-path mixture-error model.

    Updates per sweep: joint conjugate Gaussian draw of both coordinate
    coefficient vectors given the component labels; Bernoulli labels given
    the path; Beta(1 + #base, 1 + #rotated) mixture probability.
    ``cov_scale`` optionally scales the error covariance per observation
    (the hook for telemetry quality classes).
    """
    if rng is None:
        rng = np.random.default_rng()
    times = np.atleast_1d(np.asarray(times, dtype=float))
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    n = times.size
    if obs.shape != (n, 2):
        raise ValueError("observations must be n x 2 matching times")
    if sigma_alpha_sq <= 0:
        raise ValueError("ridge variance must be positive")
    nb = basis.num_basis
    if n < nb:
        warnings.warn(
            f"{n} observations for {nb} basis functions; the fit relies "
            "heavily on the ridge prior",
            RuntimeWarning,
        )
    scale = np.ones(n) if cov_scale is None else np.asarray(cov_scale, dtype=float)
    if scale.shape != (n,) or np.any(scale <= 0):
        raise ValueError("cov_scale must be n positive values")

    w = build_basis(times, basis)
    cov1 = error.base_cov
    cov2 = error.rotated_cov
    omega1 = cov1.inverse().matrix()
    omega2 = cov2.inverse().matrix()

    p_mix = error.p
    z = rng.uniform(size=n) < p_mix
    alpha = np.zeros(2 * nb)

    keep_ax, keep_ay, keep_p = [], [], []
    for k in range(1, iterations + 1):
        # per-observation 2x2 error precisions, component-dependent
        om = np.where(z[:, None, None], omega1, omega2) / scale[:, None, None]
        mean, chol = alpha_conditional(w, obs, om, sigma_alpha_sq)
        alpha = mean + np.linalg.solve(chol.T, rng.standard_normal(2 * nb))
        ax, ay = alpha[:nb], alpha[nb:]

        mu = np.column_stack([w @ ax, w @ ay])
        resid = obs - mu
        if p_mix in (0.0, 1.0):
            z = np.full(n, bool(p_mix))
        else:
            l1 = np.log(p_mix) + _two_comp_logdens(resid, cov1, scale)
            l2 = np.log1p(-p_mix) + _two_comp_logdens(resid, cov2, scale)
            prob1 = expit(l1 - l2)
            z = rng.uniform(size=n) < prob1
        p_mix = rng.beta(1.0 + z.sum(), 1.0 + n - z.sum())

        if k > burnin:
            keep_ax.append(ax.copy())
            keep_ay.append(ay.copy())
            keep_p.append(p_mix)
    return FmmFit(
        basis=basis,
        alpha_x=np.asarray(keep_ax),
        alpha_y=np.asarray(keep_ay),
        p=np.asarray(keep_p),
        error_cov=error,
    )


def impute_paths(
    fit: FmmFit, time_grid, n_paths: int, individual_id: str = "0"
) -> PathDraws:
    """Evaluate evenly spaced posterior coefficient draws on the fine time
    grid, producing the imputation pool."""
    if n_paths > fit.n_draws:
        raise ValueError(
            f"requested {n_paths} paths but only {fit.n_draws} posterior draws"
        )
    grid = np.atleast_1d(np.asarray(time_grid, dtype=float))
    w = build_basis(grid, fit.basis)
    idx = np.linspace(0, fit.n_draws - 1, n_paths).astype(int)
    draws = np.stack(
        [
            np.column_stack([w @ fit.alpha_x[i], w @ fit.alpha_y[i]])
            for i in idx
        ]
    )
    return PathDraws(individual_id=str(individual_id), times=grid, draws=draws)


class FunctionalMovementModel(BaseEstimator):
    """Estimator API for the spline path model: ``fit(times, positions)``,
    ``predict(times)`` (posterior mean path), ``sample_paths(grid, M)``."""

    def __init__(
        self,
        degree: int = 3,
        num_interior_knots: int | None = None,
        sigma_alpha_sq: float | None = None,
        mixture_p: float = 0.5,
        base_cov=None,
        rotation_angle: float = np.pi / 2,
        iterations: int = 5_000,
        burnin: int = 1_000,
        seed: int = 0,
    ):
        self.degree = degree
        self.num_interior_knots = num_interior_knots
        self.sigma_alpha_sq = sigma_alpha_sq
        self.mixture_p = mixture_p
        self.base_cov = base_cov
        self.rotation_angle = rotation_angle
        self.iterations = iterations
        self.burnin = burnin
        self.seed = seed

    def fit(self, times, positions, cov_scale=None, individual_id: str = "0"):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        n = times.size
        n_int = self.num_interior_knots
        if n_int is None:
            n_int = max(10, n // 3)
        basis = BSplineBasis.uniform(
            times.min(), times.max(), n_int, degree=self.degree
        )
        sig_a = self.sigma_alpha_sq
        if sig_a is None:
            sig_a = 100.0 * float(positions.var(axis=0).mean())
        base_cov = self.base_cov
        if base_cov is None:
            base_cov = SpdFactor.identity(2)
        elif not isinstance(base_cov, SpdFactor):
            base_cov = SpdFactor.from_matrix(base_cov)
        error = MixtureErrorParams(
            p=self.mixture_p, base_cov=base_cov, rotation_angle=self.rotation_angle
        )
        self.individual_id_ = str(individual_id)
        self.fit_ = fit_fmm(
            times,
            positions,
            basis,
            error,
            sigma_alpha_sq=sig_a,
            iterations=self.iterations,
            burnin=self.burnin,
            rng=substream(self.seed, 3_000_000),
            cov_scale=cov_scale,
        )
        return self

    def predict(self, times) -> np.ndarray:
        w = build_basis(times, self.fit_.basis)
        return np.column_stack(
            [w @ self.fit_.alpha_x.mean(axis=0), w @ self.fit_.alpha_y.mean(axis=0)]
        )

    def sample_paths(self, time_grid, n_paths: int) -> PathDraws:
        return impute_paths(
            self.fit_, time_grid, n_paths, individual_id=self.individual_id_
        )


# --- persistence ----------------------------------------------------------


def save_path_draws(paths: PathDraws, path: str) -> None:
    """Manifest + float64 payload pair (``<id>.json`` / ``<id>.bin``) in the
    given directory."""
    os.makedirs(path, exist_ok=True)
    t = paths.times
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    if t.size > 2 and not np.allclose(np.diff(t), dt):
        raise ValueError("path draw files require a uniform time grid")
    man = {
        "individual_id": paths.individual_id,
        "M": paths.n_paths,
        "grid_start": float(t[0]),
        "grid_dt": dt,
        "grid_len": int(t.size),
    }
    with open(os.path.join(path, f"{paths.individual_id}.json"), "w") as fh:
        json.dump(man, fh, indent=1)
    np.ascontiguousarray(paths.draws, dtype="<f8").tofile(
        os.path.join(path, f"{paths.individual_id}.bin")
    )


def load_path_draws(path: str, individual_id: str) -> PathDraws:
    man_path = os.path.join(path, f"{individual_id}.json")
    if not os.path.exists(man_path):
        raise FileNotFoundError(f"path draw manifest not found: {man_path}")
    with open(man_path) as fh:
        man = json.load(fh)
    m, t_len = int(man["M"]), int(man["grid_len"])
    data = np.fromfile(os.path.join(path, f"{individual_id}.bin"), dtype="<f8")
    if data.size != m * t_len * 2:
        raise ValueError(
            f"path payload for {individual_id} has {data.size} values, "
            f"expected {m * t_len * 2}"
        )
    times = man["grid_start"] + man["grid_dt"] * np.arange(t_len)
    return PathDraws(
        individual_id=str(man["individual_id"]),
        times=times,
        draws=data.reshape(m, t_len, 2),
    )
