"""Densities, samplers, and SPD matrix plumbing shared by every sampler.

Everything is computed in log space and through Cholesky factors; an SPD
matrix that fails to factor is a hard error, never silently regularized.
All random draws take an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

__all__ = [
    "SpdFactor",
    "MvnParams",
    "WishartParams",
    "MixtureErrorParams",
    "substream",
    "mvn_logpdf",
    "mvn_logpdf_many",
    "mvn_logpdf_prec",
    "mvn_sample",
    "wishart_sample",
    "poisson_logpmf",
    "mixture2_logpdf",
    "rotation_matrix",
    "rotate_cov",
]

_SYM_TOL = 1e-10


def substream(seed: int, *key: int) -> np.random.Generator:
    """Derive an independent RNG stream from a master seed and an index key.

    Uses ``SeedSequence(seed, spawn_key=key)``, so the stream for a given
    (seed, key) pair is fixed regardless of process, worker count, or the
    order in which streams are created.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class SpdFactor:
    """A symmetric positive definite matrix held as its lower Cholesky factor."""

    dim: int
    lower: np.ndarray
    log_det: float

    @classmethod
    def from_matrix(cls, matrix) -> "SpdFactor":
        m = np.asarray(matrix, dtype=float)
        if m.ndim == 0:
            m = m.reshape(1, 1)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix has non-finite entries")
        if np.max(np.abs(m - m.T)) > _SYM_TOL * max(1.0, np.max(np.abs(m))):
            raise ValueError("matrix is not symmetric within tolerance")
        try:
            lower = np.linalg.cholesky(m)
        except np.linalg.LinAlgError as exc:
            raise ValueError("matrix is not positive definite") from exc
        log_det = 2.0 * float(np.sum(np.log(np.diag(lower))))
        return cls(dim=m.shape[0], lower=lower, log_det=log_det)

    @classmethod
    def from_diagonal(cls, diag) -> "SpdFactor":
        d = np.atleast_1d(np.asarray(diag, dtype=float))
        if np.any(d <= 0):
            raise ValueError("diagonal entries must be positive")
        return cls(
            dim=d.size,
            lower=np.diag(np.sqrt(d)),
            log_det=float(np.sum(np.log(d))),
        )

    @classmethod
    def from_cholesky(cls, lower) -> "SpdFactor":
        lo = np.asarray(lower, dtype=float)
        if np.any(np.diag(lo) <= 0):
            raise ValueError("Cholesky factor needs a strictly positive diagonal")
        return cls(
            dim=lo.shape[0],
            lower=lo,
            log_det=2.0 * float(np.sum(np.log(np.diag(lo)))),
        )

    @classmethod
    def identity(cls, dim: int) -> "SpdFactor":
        return cls(dim=dim, lower=np.eye(dim), log_det=0.0)

    def matrix(self) -> np.ndarray:
        return self.lower @ self.lower.T

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (L L') x = b."""
        return cho_solve((self.lower, True), b)

    def inverse(self) -> "SpdFactor":
        return SpdFactor.from_matrix(self.solve(np.eye(self.dim)))

    def whiten(self, residual: np.ndarray) -> np.ndarray:
        """Solve L z = residual; rows of a 2-D input are residual vectors."""
        r = np.asarray(residual, dtype=float)
        if r.ndim == 1:
            return solve_triangular(self.lower, r, lower=True)
        return solve_triangular(self.lower, r.T, lower=True).T


@dataclass(frozen=True)
class MvnParams:
    """Mean and covariance of a multivariate Gaussian."""

    mean: np.ndarray
    covariance: SpdFactor

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "mean", mean)
        if mean.size != self.covariance.dim:
            raise ValueError(
                f"mean length {mean.size} != covariance dim {self.covariance.dim}"
            )

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class WishartParams:
    """Scale matrix and degrees of freedom; E[W] = dof * scale."""

    scale: SpdFactor
    dof: float

    def __post_init__(self):
        if self.dof < self.scale.dim:
            raise ValueError(
                f"dof {self.dof} must be >= dimension {self.scale.dim}"
            )


@dataclass(frozen=True)
class MixtureErrorParams:
    """Two-component bivariate Gaussian error: base covariance with
    probability ``p``, the same covariance on a rotated axis otherwise."""

    p: float
    base_cov: SpdFactor
    rotation_angle: float = np.pi / 2

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("mixture probability must lie in [0, 1]")
        if self.base_cov.dim != 2:
            raise ValueError("mixture error covariance must be 2x2")

    @property
    def rotated_cov(self) -> SpdFactor:
        return rotate_cov(self.base_cov, self.rotation_angle)


def _check_vector(x, dim: int, name: str = "x") -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.size != dim:
        raise ValueError(f"{name} has length {v.size}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def mvn_logpdf(x, params: MvnParams) -> float:
    """Log density of N(mean, covariance), via the triangular factor."""
    v = _check_vector(x, params.dim)
    z = params.covariance.whiten(v - params.mean)
    return float(
        -0.5 * params.dim * np.log(2.0 * np.pi)
        - 0.5 * params.covariance.log_det
        - 0.5 * z @ z
    )

def mvn_logpdf_many(xs: np.ndarray, params: MvnParams) -> np.ndarray:
    """Row-wise mvn_logpdf for an (n, dim) array."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    z = params.covariance.whiten(xs - params.mean)
    return (
        -0.5 * params.dim * np.log(2.0 * np.pi)
        - 0.5 * params.covariance.log_det
        - 0.5 * np.sum(z * z, axis=1)
    )


def mvn_logpdf_prec(x, mean, precision: SpdFactor) -> float:
    """Gaussian log density parameterized by the precision matrix."""
    v = _check_vector(x, precision.dim)
    r = v - np.atleast_1d(np.asarray(mean, dtype=float))
    q = r @ (precision.lower @ (precision.lower.T @ r))
    return float(
        -0.5 * precision.dim * np.log(2.0 * np.pi)
        + 0.5 * precision.log_det
        - 0.5 * q
    )


def mvn_sample(rng: np.random.Generator, params: MvnParams) -> np.ndarray:
    """Draw mean + L z with z standard normal."""
    z = rng.standard_normal(params.dim)
    return params.mean + params.covariance.lower @ z


def wishart_sample(rng: np.random.Generator, params: WishartParams) -> SpdFactor:
    """Bartlett-decomposition Wishart draw; returns the SPD result factored."""
    d = params.scale.dim
    a = np.zeros((d, d))
    for i in range(d):
        a[i, i] = np.sqrt(rng.chisquare(params.dof - i))
    if d > 1:
        idx = np.tril_indices(d, k=-1)
        a[idx] = rng.standard_normal(len(idx[0]))
    return SpdFactor.from_cholesky(params.scale.lower @ a)


def poisson_logpmf(y, lam) -> float:
    """log Pois(y | lam) = y log lam - lam - log y!."""
    if lam <= 0:
        raise ValueError("Poisson rate must be positive")
    if y < 0 or y != int(y):
        raise ValueError("count must be a nonnegative integer")
    return float(y * np.log(lam) - lam - gammaln(y + 1.0))


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s], [-s, c]])


def rotate_cov(cov: SpdFactor, angle: float) -> SpdFactor:
    """Return H cov H' for the 2-D rotation H of the given angle."""
    if cov.dim != 2:
        raise ValueError("rotate_cov is defined for 2x2 covariances only")
    h = rotation_matrix(angle)
    m = h @ cov.matrix() @ h.T
    return SpdFactor.from_matrix(0.5 * (m + m.T))


def mixture2_logpdf(x, mean, params: MixtureErrorParams) -> float:
    """Log density of the two-component rotated-Gaussian error mixture."""
    base = MvnParams(mean=np.asarray(mean, dtype=float), covariance=params.base_cov)
    rot = MvnParams(mean=base.mean, covariance=params.rotated_cov)
    if params.p == 1.0:
        return mvn_logpdf(x, base)
    if params.p == 0.0:
        return mvn_logpdf(x, rot)
    a = np.log(params.p) + mvn_logpdf(x, base)
    b = np.log1p(-params.p) + mvn_logpdf(x, rot)
    return float(np.logaddexp(a, b))
