"""Second-stage MCMC: conjugate Gibbs updates for the population mean and
precision, and a tuning-free Metropolis-Hastings step that resamples each
individual's coefficients uniformly from its stage-one draw pool.

The resampling ratio compares only the population process density and the
stage-one prior; by construction it never sees the raw data. A single-chain
full-hierarchy sampler (MH-within-Gibbs on the original model) is included
as the reference implementation for equivalence checks.
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .probdist import (
    MvnParams,
    SpdFactor,
    WishartParams,
    mvn_logpdf_many,
    mvn_sample,
    substream,
    wishart_sample,
)
from .stage1 import ChainConfig, DrawMatrix, IndividualModel, default_target_acceptance

__all__ = [
    "HyperPriors",
    "PopulationState",
    "Stage2Output",
    "mu_full_conditional",
    "resample_log_ratio",
    "gibbs_update_mu",
    "gibbs_update_sigma_inv",
    "mh_resample_beta",
    "run_stage2",
    "run_full_hierarchy",
    "Stage2Resampler",
    "FullHierarchySampler",
    "save_stage2_output",
    "load_stage2_output",
]

LOW_ACCEPTANCE_WARN = 0.02


@dataclass(frozen=True)
class HyperPriors:
    """Gaussian prior for the population mean, Wishart for the precision."""

    mu0: MvnParams
    wishart: WishartParams

    def __post_init__(self):
        if self.mu0.dim != self.wishart.scale.dim:
            raise ValueError("hyperprior dimensions disagree")

    @property
    def dim(self) -> int:
        return self.mu0.dim

    @classmethod
    def default(cls, p: int) -> "HyperPriors":
        """N(0, 100 I) mean prior and Wish((nu I)^-1, nu) with nu = max(3, p)."""
        nu = float(max(3, p))
        return cls(
            mu0=MvnParams(np.zeros(p), SpdFactor.from_diagonal(np.full(p, 100.0))),
            wishart=WishartParams(
                scale=SpdFactor.from_diagonal(np.full(p, 1.0 / nu)), dof=nu
            ),
        )


@dataclass
class PopulationState:
    """Mutable state of the second-stage chain."""

    mu_beta: np.ndarray
    sigma_inv: SpdFactor
    betas: np.ndarray  # J x p
    pool_indices: np.ndarray  # J ints


@dataclass(frozen=True)
class Stage2Output:
    mu_draws: np.ndarray  # K x p
    sigma_inv_draws: np.ndarray  # K x p x p
    beta_draws: np.ndarray | None  # K x J x p
    acceptance_rates: np.ndarray  # J

    @property
    def n_draws(self) -> int:
        return self.mu_draws.shape[0]

    @property
    def p(self) -> int:
        return self.mu_draws.shape[1]


def mu_full_conditional(
    betas: np.ndarray, sigma_inv: SpdFactor, hyper: HyperPriors
) -> MvnParams:
    """Gaussian full conditional of the population mean:
    N(A^-1 b, A^-1) with A = J Sigma^-1 + Sigma0^-1."""
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    p = hyper.dim
    if betas.size and betas.shape[1] != p:
        raise ValueError("beta dimension does not match hyperpriors")
    j = betas.shape[0] if betas.size else 0
    prec = sigma_inv.matrix()
    prior_prec = hyper.mu0.covariance.inverse().matrix()
    a = j * prec + prior_prec
    b = prior_prec @ hyper.mu0.mean
    if j:
        b = b + prec @ betas.sum(axis=0)
    a_f = SpdFactor.from_matrix(a)
    mean = a_f.solve(b)
    cov = SpdFactor.from_matrix(a_f.solve(np.eye(p)))
    return MvnParams(mean, cov)


def gibbs_update_mu(
    betas: np.ndarray,
    sigma_inv: SpdFactor,
    hyper: HyperPriors,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the population mean from its Gaussian full conditional."""
    return mvn_sample(rng, mu_full_conditional(betas, sigma_inv, hyper))


def gibbs_update_sigma_inv(
    betas: np.ndarray,
    mu_beta: np.ndarray,
    hyper: HyperPriors,
    rng: np.random.Generator,
) -> SpdFactor:
    """Draw the population precision from its Wishart full conditional
    Wish((S nu + sum_j r_j r_j')^-1, nu + J)."""
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    p = hyper.dim
    j = betas.shape[0] if betas.size else 0
    scale_inv = hyper.wishart.scale.inverse().matrix()
    if j:
        resid = betas - np.asarray(mu_beta, dtype=float)
        scale_inv = scale_inv + resid.T @ resid
    post_scale = SpdFactor.from_matrix(scale_inv).inverse()
    return wishart_sample(rng, WishartParams(scale=post_scale, dof=hyper.wishart.dof + j))


def _process_logpdf(betas: np.ndarray, mu_beta, sigma_inv: SpdFactor) -> np.ndarray:
    """Row-wise log N(beta | mu_beta, Sigma) via the precision factor."""
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    r = betas - np.asarray(mu_beta, dtype=float)
    z = r @ sigma_inv.lower
    return (
        -0.5 * sigma_inv.dim * np.log(2.0 * np.pi)
        + 0.5 * sigma_inv.log_det
        - 0.5 * np.sum(z * z, axis=1)
    )


def resample_log_ratio(
    candidate: np.ndarray,
    current: np.ndarray,
    mu_beta: np.ndarray,
    sigma_inv: SpdFactor,
    stage1_prior: MvnParams,
) -> float:
    """Tuning-free resampling log ratio

        log r = log N(b* | mu, Sigma) + log N(b | mu0, Sigma0)
              - log N(b  | mu, Sigma) - log N(b* | mu0, Sigma0),

    which involves no data and no tuning parameter. Antisymmetric in
    (candidate, current); zero when the process equals the stage-one
    prior or the two arguments coincide."""
    pair = np.vstack([candidate, current])
    proc = _process_logpdf(pair, mu_beta, sigma_inv)
    prior = mvn_logpdf_many(pair, stage1_prior)
    return float((proc[0] - proc[1]) + (prior[1] - prior[0]))


def mh_resample_beta(
    j: int,
    pool: DrawMatrix,
    state: PopulationState,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int, bool]:
    """One resampling update for individual ``j``: propose a uniformly drawn
    pool row and accept with the :func:`resample_log_ratio` probability."""
    if pool.n_draws == 0:
        raise ValueError("empty draw pool")
    cand_idx = int(rng.integers(pool.n_draws))
    cur = state.betas[j]
    cand = pool.draws[cand_idx, : pool.p]
    log_r = resample_log_ratio(
        cand, cur, state.mu_beta, state.sigma_inv, pool.stage1_prior
    )
    if log_r >= 0 or np.log(rng.uniform()) < log_r:
        return cand.copy(), cand_idx, True
    return cur.copy(), int(state.pool_indices[j]), False


def _init_state(
    pools: list[DrawMatrix], hyper: HyperPriors, rng: np.random.Generator
) -> PopulationState:
    p = hyper.dim
    idx = np.array([int(rng.integers(pool.n_draws)) for pool in pools])
    betas = np.vstack([pool.draws[i, :p] for pool, i in zip(pools, idx)])
    sigma_inv = wishart_sample(rng, hyper.wishart)
    mu = gibbs_update_mu(betas, sigma_inv, hyper, rng)
    return PopulationState(mu_beta=mu, sigma_inv=sigma_inv, betas=betas, pool_indices=idx)


def run_stage2(
    pools: list[DrawMatrix],
    hyper: HyperPriors,
    config: ChainConfig,
    rng: np.random.Generator,
    store_betas: bool = True,
) -> Stage2Output:
    """Run the second-stage chain over the stage-one pools. Per iteration:
    resample every beta_j, then Gibbs-update mu and Sigma^-1. Consumes only
    pools and hyperpriors; the raw data never enter."""
    if not pools:
        raise ValueError("need at least one draw pool")
    p = hyper.dim
    for pool in pools:
        if pool.p != p:
            raise ValueError(
                f"pool {pool.individual_id} has dimension {pool.p}, expected {p}"
            )
    j_n = len(pools)
    state = _init_state(pools, hyper, rng)
    mu_list, sig_list, beta_list = [], [], []
    accepts = np.zeros(j_n)
    n_counted = 0
    for k in range(1, config.iterations + 1):
        for j in range(j_n):
            beta, idx, accepted = mh_resample_beta(j, pools[j], state, rng)
            state.betas[j] = beta
            state.pool_indices[j] = idx
            if k > config.burnin:
                accepts[j] += accepted
        state.mu_beta = gibbs_update_mu(state.betas, state.sigma_inv, hyper, rng)
        state.sigma_inv = gibbs_update_sigma_inv(
            state.betas, state.mu_beta, hyper, rng
        )
        if k > config.burnin:
            n_counted += 1
            if (k - config.burnin) % config.thin == 0:
                mu_list.append(state.mu_beta.copy())
                sig_list.append(state.sigma_inv.matrix())
                if store_betas:
                    beta_list.append(state.betas.copy())
    rates = accepts / max(n_counted, 1)
    for j, rate in enumerate(rates):
        if rate < LOW_ACCEPTANCE_WARN:
            warnings.warn(
                f"individual {pools[j].individual_id}: pool acceptance rate "
                f"{rate:.3f} is below {LOW_ACCEPTANCE_WARN}; the stage-one pool "
                "may be too short or the data too sparse",
                RuntimeWarning,
            )
    mu_draws = np.asarray(mu_list)
    sig_draws = np.asarray(sig_list)
    return Stage2Output(
        mu_draws=mu_draws,
        sigma_inv_draws=sig_draws,
        beta_draws=np.asarray(beta_list) if store_betas else None,
        acceptance_rates=rates,
    )


def run_full_hierarchy(
    models: list[IndividualModel],
    hyper: HyperPriors,
    config: ChainConfig,
    rng: np.random.Generator,
    store_betas: bool = True,
) -> Stage2Output:
    """Single-chain MH-within-Gibbs baseline on the full hierarchy:
    adaptive random-walk updates of each beta_j against its likelihood times
    the population process density, plus the same conjugate mu/Sigma
    updates as the second stage."""
    if not models:
        raise ValueError("need at least one individual model")
    p = hyper.dim
    for model in models:
        if model.dim_beta != p:
            raise ValueError("model dimension does not match hyperpriors")
    j_n = len(models)
    target = config.target_acceptance
    if target is None:
        target = default_target_acceptance(p)

    sigma_inv = wishart_sample(rng, hyper.wishart)
    betas = np.vstack([mvn_sample(rng, m.beta_prior) for m in models])
    logliks = np.array([m.log_likelihood(b) for m, b in zip(models, betas)])
    mu = gibbs_update_mu(betas, sigma_inv, hyper, rng)
    log_scales = np.full(j_n, config.initial_log_scale)

    mu_list, sig_list, beta_list = [], [], []
    accepts = np.zeros(j_n)
    n_counted = 0
    for k in range(1, config.iterations + 1):
        proc_cur = _process_logpdf(betas, mu, sigma_inv)
        for j, model in enumerate(models):
            if model.resamples_data:
                model.refresh_data(rng)
                logliks[j] = model.log_likelihood(betas[j])
            step = np.exp(0.5 * log_scales[j])
            cand = betas[j] + step * rng.standard_normal(p)
            cand_ll = model.log_likelihood(cand)
            cand_proc = _process_logpdf(cand, mu, sigma_inv)[0]
            log_r = (cand_ll + cand_proc) - (logliks[j] + proc_cur[j])
            accept_prob = min(1.0, np.exp(min(0.0, log_r)))
            if np.log(rng.uniform()) < log_r:
                betas[j] = cand
                logliks[j] = cand_ll
                proc_cur[j] = cand_proc
                if k > config.burnin:
                    accepts[j] += 1
            if k <= config.burnin:
                log_scales[j] += k ** -0.6 * (accept_prob - target)
        mu = gibbs_update_mu(betas, sigma_inv, hyper, rng)
        sigma_inv = gibbs_update_sigma_inv(betas, mu, hyper, rng)
        if k > config.burnin:
            n_counted += 1
            if (k - config.burnin) % config.thin == 0:
                mu_list.append(mu.copy())
                sig_list.append(sigma_inv.matrix())
                if store_betas:
                    beta_list.append(betas.copy())
    return Stage2Output(
        mu_draws=np.asarray(mu_list),
        sigma_inv_draws=np.asarray(sig_list),
        beta_draws=np.asarray(beta_list) if store_betas else None,
        acceptance_rates=accepts / max(n_counted, 1),
    )


class Stage2Resampler(BaseEstimator):
    """Estimator interface to :func:`run_stage2`; ``fit(pools)`` stores
    ``mu_draws_``, ``sigma_inv_draws_``, ``beta_draws_``."""

    def __init__(
        self,
        iterations: int = 20_000,
        burnin: int = 5_000,
        thin: int = 1,
        seed: int = 0,
        store_betas: bool = True,
    ):
        self.iterations = iterations
        self.burnin = burnin
        self.thin = thin
        self.seed = seed
        self.store_betas = store_betas

    def fit(self, pools: list[DrawMatrix], hyper: HyperPriors | None = None):
        if hyper is None:
            hyper = HyperPriors.default(pools[0].p)
        config = ChainConfig(
            iterations=self.iterations,
            burnin=self.burnin,
            thin=self.thin,
            seed=self.seed,
        )
        out = run_stage2(
            pools, hyper, config, substream(self.seed, 1_000_000),
            store_betas=self.store_betas,
        )
        self.output_ = out
        self.mu_draws_ = out.mu_draws
        self.sigma_inv_draws_ = out.sigma_inv_draws
        self.beta_draws_ = out.beta_draws
        return self


class FullHierarchySampler(BaseEstimator):
    """Estimator interface to :func:`run_full_hierarchy`."""

    def __init__(
        self,
        iterations: int = 20_000,
        burnin: int = 5_000,
        thin: int = 1,
        seed: int = 0,
        store_betas: bool = True,
    ):
        self.iterations = iterations
        self.burnin = burnin
        self.thin = thin
        self.seed = seed
        self.store_betas = store_betas

    def fit(self, models: list[IndividualModel], hyper: HyperPriors | None = None):
        if hyper is None:
            hyper = HyperPriors.default(models[0].dim_beta)
        config = ChainConfig(
            iterations=self.iterations,
            burnin=self.burnin,
            thin=self.thin,
            seed=self.seed,
        )
        out = run_full_hierarchy(
            models, hyper, config, substream(self.seed, 2_000_000),
            store_betas=self.store_betas,
        )
        self.output_ = out
        self.mu_draws_ = out.mu_draws
        self.sigma_inv_draws_ = out.sigma_inv_draws
        self.beta_draws_ = out.beta_draws
        return self


# --- persistence ----------------------------------------------------------


def save_stage2_output(out: Stage2Output, path: str) -> None:
    """Manifest + little-endian float64 payloads, one pair per block."""
    os.makedirs(path, exist_ok=True)
    k, p = out.mu_draws.shape
    man = {
        "K": k,
        "p": p,
        "J": None if out.beta_draws is None else out.beta_draws.shape[1],
        "acceptance_rates": out.acceptance_rates.tolist(),
        "blocks": ["mu", "sigma_inv"] + ([] if out.beta_draws is None else ["beta"]),
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(man, fh, indent=1)
    np.ascontiguousarray(out.mu_draws, dtype="<f8").tofile(
        os.path.join(path, "mu.bin")
    )
    np.ascontiguousarray(out.sigma_inv_draws, dtype="<f8").tofile(
        os.path.join(path, "sigma_inv.bin")
    )
    if out.beta_draws is not None:
        np.ascontiguousarray(out.beta_draws, dtype="<f8").tofile(
            os.path.join(path, "beta.bin")
        )


def load_stage2_output(path: str) -> Stage2Output:
    man_path = os.path.join(path, "manifest.json")
    if not os.path.exists(man_path):
        raise FileNotFoundError(f"stage-two manifest not found: {man_path}")
    with open(man_path) as fh:
        man = json.load(fh)
    k, p = int(man["K"]), int(man["p"])
    mu = np.fromfile(os.path.join(path, "mu.bin"), dtype="<f8")
    sig = np.fromfile(os.path.join(path, "sigma_inv.bin"), dtype="<f8")
    if mu.size != k * p or sig.size != k * p * p:
        raise ValueError("stage-two payload size disagrees with manifest")
    beta = None
    if man.get("J") is not None:
        j = int(man["J"])
        beta = np.fromfile(os.path.join(path, "beta.bin"), dtype="<f8")
        if beta.size != k * j * p:
            raise ValueError("beta payload size disagrees with manifest")
        beta = beta.reshape(k, j, p)
    return Stage2Output(
        mu_draws=mu.reshape(k, p),
        sigma_inv_draws=sig.reshape(k, p, p),
        beta_draws=beta,
        acceptance_rates=np.asarray(man["acceptance_rates"], dtype=float),
    )
