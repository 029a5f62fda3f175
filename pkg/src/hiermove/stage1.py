"""First-stage fitting: an unsupervised adaptive random-walk Metropolis
sampler run independently per individual, a deterministic parallel runner,
and file persistence for the resulting draw pools.

The proposal covariance is ``exp(log_scale) * I`` and only the scalar
``log_scale`` adapts (Robbins-Monro, step ``k**-0.6``) during burn-in;
after burn-in the scale is frozen so retained draws come from a fixed
Markov kernel.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .probdist import MvnParams, SpdFactor, mvn_logpdf, mvn_sample, substream

__all__ = [
    "IndividualModel",
    "ChainConfig",
    "DrawMatrix",
    "AdaptiveRWMH",
    "adaptive_rwmh_fit",
    "run_parallel",
    "save_draws",
    "load_draws",
    "default_target_acceptance",
]


class IndividualModel:
    """Interface for one individual's model: a coefficient vector of length
    ``dim_beta`` (plus ``dim_aux`` auxiliary parameters, usually zero), a
    log likelihood over that individual's data, and the exchangeable
    stage-one Gaussian prior.

    ``resamples_data`` marks models whose likelihood integrates over an
    imputation pool; the sampler calls ``refresh_data`` once per iteration
    for those and re-evaluates the current state's log posterior.
    """

    beta_prior: MvnParams
    resamples_data: bool = False

    @property
    def dim_beta(self) -> int:
        return self.beta_prior.dim

    @property
    def dim_aux(self) -> int:
        return 0

    def log_likelihood(self, beta: np.ndarray, theta: np.ndarray | None = None) -> float:
        raise NotImplementedError

    def log_prior_beta(self, beta: np.ndarray) -> float:
        return mvn_logpdf(beta, self.beta_prior)

    def log_prior_theta(self, theta: np.ndarray) -> float:
        return 0.0

    def initial_theta(self) -> np.ndarray:
        return np.zeros(self.dim_aux)

    def refresh_data(self, rng: np.random.Generator) -> None:
        pass


def default_target_acceptance(dim: int) -> float:
    """Optimal-scaling defaults: 0.44 in 1-D, 0.234 for dim >= 5, linear
    interpolation in between."""
    if dim <= 1:
        return 0.44
    if dim >= 5:
        return 0.234
    return 0.44 + (dim - 1) / 4.0 * (0.234 - 0.44)


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 20_000
    burnin: int = 5_000
    thin: int = 1
    seed: int = 0
    target_acceptance: float | None = None
    initial_log_scale: float = 0.0
    store_aux: bool = False

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("burnin must satisfy 0 <= burnin < iterations")
        if self.thin <= 0:
            raise ValueError("thin must be positive")
        if self.target_acceptance is not None and not (
            0.0 < self.target_acceptance < 1.0
        ):
            raise ValueError("target_acceptance must lie in (0, 1)")


@dataclass(frozen=True)
class DrawMatrix:
    """Post-burn-in, thinned draws for one individual, with the stage-one
    prior that produced them (the second stage needs it in its ratio)."""

    individual_id: str
    draws: np.ndarray  # K x (p [+ q])
    acceptance_rate: float
    stage1_prior: MvnParams
    p: int
    q: int = 0

    def __post_init__(self):
        if self.draws.ndim != 2 or self.draws.shape[0] < 1:
            raise ValueError("draws must be a nonempty 2-D array")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("draws contain non-finite values")
        if self.stage1_prior.dim != self.p:
            raise ValueError("stage1_prior dimension must equal p")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def beta_draws(self) -> np.ndarray:
        return self.draws[:, : self.p]


def adaptive_rwmh_fit(
    model: IndividualModel,
    config: ChainConfig,
    rng: np.random.Generator,
    individual_id: str = "0",
) -> DrawMatrix:
    """Run the adaptive random-walk chain for one individual."""
    p, q = model.dim_beta, model.dim_aux
    d = p + q
    target = config.target_acceptance
    if target is None:
        target = default_target_acceptance(d)

    def split(x):
        return (x[:p], x[p:]) if q > 0 else (x, None)

    def log_post(x):
        beta, theta = split(x)
        lp = model.log_prior_beta(beta)
        if q > 0:
            lp += model.log_prior_theta(theta)
        if not np.isfinite(lp):
            return -np.inf
        ll = model.log_likelihood(beta, theta)
        return lp + ll if np.isfinite(ll) else -np.inf

    current = np.empty(d)
    cur_lp = -np.inf
    for _ in range(50):
        current[:p] = mvn_sample(rng, model.beta_prior)
        if q > 0:
            current[p:] = model.initial_theta()
        cur_lp = log_post(current)
        if np.isfinite(cur_lp):
            break
    if not np.isfinite(cur_lp):
        raise ValueError(
            f"individual {individual_id}: could not find a finite initial "
            "log posterior from the stage-one prior"
        )

    log_scale = config.initial_log_scale
    kept = []
    accepts_post = 0
    n_post = 0
    for k in range(1, config.iterations + 1):
        if model.resamples_data:
            model.refresh_data(rng)
            cur_lp = log_post(current)
        step = np.exp(0.5 * log_scale)
        proposal = current + step * rng.standard_normal(d)
        prop_lp = log_post(proposal)
        log_u = np.log(rng.uniform())
        accept_prob = min(1.0, np.exp(min(0.0, prop_lp - cur_lp)))
        if log_u < prop_lp - cur_lp:
            current = proposal
            cur_lp = prop_lp
            accepted = True
        else:
            accepted = False
        if k <= config.burnin:
            log_scale += k ** -0.6 * (accept_prob - target)
        else:
            n_post += 1
            accepts_post += accepted
            if (k - config.burnin) % config.thin == 0:
                kept.append(current.copy())

    draws = np.asarray(kept)
    if not (q > 0 and config.store_aux):
        draws = draws[:, :p]
    return DrawMatrix(
        individual_id=str(individual_id),
        draws=draws,
        acceptance_rate=accepts_post / max(n_post, 1),
        stage1_prior=model.beta_prior,
        p=p,
        q=draws.shape[1] - p,
    )


class AdaptiveRWMH(BaseEstimator):
    """Estimator wrapper around :func:`adaptive_rwmh_fit`.

    ``fit(model)`` runs the chain and exposes ``draws_`` and
    ``acceptance_rate_``; parameters mirror :class:`ChainConfig`.
    """

    def __init__(
        self,
        iterations: int = 20_000,
        burnin: int = 5_000,
        thin: int = 1,
        seed: int = 0,
        target_acceptance: float | None = None,
        initial_log_scale: float = 0.0,
    ):
        self.iterations = iterations
        self.burnin = burnin
        self.thin = thin
        self.seed = seed
        self.target_acceptance = target_acceptance
        self.initial_log_scale = initial_log_scale

    def _config(self) -> ChainConfig:
        return ChainConfig(
            iterations=self.iterations,
            burnin=self.burnin,
            thin=self.thin,
            seed=self.seed,
            target_acceptance=self.target_acceptance,
            initial_log_scale=self.initial_log_scale,
        )

    def fit(self, model: IndividualModel, individual_id: str = "0"):
        rng = substream(self.seed, 0)
        self.result_ = adaptive_rwmh_fit(
            model, self._config(), rng, individual_id=individual_id
        )
        self.draws_ = self.result_.draws
        self.acceptance_rate_ = self.result_.acceptance_rate
        return self


def _fit_one(args):
    model, config, seed, index, individual_id = args
    rng = substream(seed, index)
    return adaptive_rwmh_fit(model, config, rng, individual_id=individual_id)


def run_parallel(
    models: list[IndividualModel],
    config: ChainConfig,
    workers: int = 1,
    ids: list[str] | None = None,
) -> list[DrawMatrix]:
    """Fit all individuals independently. Each individual's RNG stream is
    derived from ``(config.seed, index)``, so the output does not depend on
    the worker count or scheduling."""
    if not models:
        raise ValueError("need at least one individual model")
    if ids is None:
        ids = [str(j) for j in range(len(models))]
    jobs = [
        (model, config, config.seed, j, ids[j]) for j, model in enumerate(models)
    ]
    if workers <= 1 or len(models) == 1:
        return [_fit_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_fit_one, jobs))


# --- draw pool persistence ------------------------------------------------
# One file pair per individual: "<id>.json" manifest and "<id>.bin" payload
# (little-endian float64, row-major K x (p+q)).


def _manifest(dm: DrawMatrix) -> dict:
    return {
        "individual_id": dm.individual_id,
        "p": dm.p,
        "q": dm.q,
        "K": dm.n_draws,
        "acceptance_rate": dm.acceptance_rate,
        "prior_mean": dm.stage1_prior.mean.tolist(),
        "prior_cov": dm.stage1_prior.covariance.matrix().tolist(),
    }


def save_draws(pool: list[DrawMatrix], path: str) -> None:
    """Write a draw pool to a directory, one manifest/payload pair per
    individual plus an ``index.json`` listing the ids in order."""
    os.makedirs(path, exist_ok=True)
    for dm in pool:
        with open(os.path.join(path, f"{dm.individual_id}.json"), "w") as fh:
            json.dump(_manifest(dm), fh, indent=1)
        payload = np.ascontiguousarray(dm.draws, dtype="<f8")
        payload.tofile(os.path.join(path, f"{dm.individual_id}.bin"))
    with open(os.path.join(path, "index.json"), "w") as fh:
        json.dump({"individuals": [dm.individual_id for dm in pool]}, fh, indent=1)


def load_draws(path: str) -> list[DrawMatrix]:
    index_path = os.path.join(path, "index.json")
    if not os.path.exists(index_path):
        raise FileNotFoundError(f"draw pool index not found: {index_path}")
    with open(index_path) as fh:
        ids = json.load(fh)["individuals"]
    pool = []
    for iid in ids:
        man_path = os.path.join(path, f"{iid}.json")
        bin_path = os.path.join(path, f"{iid}.bin")
        if not os.path.exists(man_path) or not os.path.exists(bin_path):
            raise FileNotFoundError(f"missing pool files for individual {iid}")
        with open(man_path) as fh:
            man = json.load(fh)
        try:
            k, p, q = int(man["K"]), int(man["p"]), int(man["q"])
            prior = MvnParams(
                mean=np.asarray(man["prior_mean"], dtype=float),
                covariance=SpdFactor.from_matrix(man["prior_cov"]),
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"malformed manifest for individual {iid}: {exc}")
        data = np.fromfile(bin_path, dtype="<f8")
        if data.size != k * (p + q):
            raise ValueError(
                f"payload for individual {iid} has {data.size} values, "
                f"manifest promises {k * (p + q)}"
            )
        pool.append(
            DrawMatrix(
                individual_id=str(man["individual_id"]),
                draws=data.reshape(k, p + q),
                acceptance_rate=float(man["acceptance_rate"]),
                stage1_prior=prior,
                p=p,
                q=q,
            )
        )
    return pool
