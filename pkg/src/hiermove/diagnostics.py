"""Chain summaries, effective sample size, and run-to-run comparison."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .stage2 import Stage2Output

__all__ = [
    "ChainSummary",
    "effective_sample_size",
    "summarize",
    "compare_runs",
    "write_summary_csv",
    "write_interval_csv",
    "stage2_parameter_table",
]

QUANTILES = (2.5, 25.0, 50.0, 75.0, 97.5)


@dataclass(frozen=True)
class ChainSummary:
    name: str
    mean: float
    sd: float
    quantiles: tuple[float, ...]  # 2.5, 25, 50, 75, 97.5 %
    ess: float


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    return acov / acov[0]


def effective_sample_size(chain) -> float:
    """N / (1 + 2 sum rho_t) with the initial-positive-sequence truncation
    (consecutive autocorrelations are summed in pairs and accumulated while
    the pair sums stay positive). A constant chain has ESS 0 by convention."""
    x = np.atleast_1d(np.asarray(chain, dtype=float))
    n = x.size
    if n < 10:
        raise ValueError("chain too short for an ESS estimate")
    if np.ptp(x) == 0:
        return 0.0
    rho = _autocorrelation(x)
    tau = 1.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
        t += 2
    return float(min(n, max(0.0, n / tau)))


def summarize(draws: np.ndarray, names: list[str] | None = None) -> list[ChainSummary]:
    """Per-column posterior summaries; quantiles by linear interpolation of
    order statistics."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.size == 0:
        raise ValueError("empty draws")
    if draws.shape[1] > draws.shape[0] and draws.shape[0] == 1:
        draws = draws.T
    n_par = draws.shape[1]
    if names is None:
        names = [f"param{i}" for i in range(n_par)]
    if len(names) != n_par:
        raise ValueError("one name per column required")
    out = []
    for i, name in enumerate(names):
        col = draws[:, i]
        qs = tuple(float(q) for q in np.percentile(col, QUANTILES))
        out.append(
            ChainSummary(
                name=name,
                mean=float(col.mean()),
                sd=float(col.std(ddof=1)) if col.size > 1 else 0.0,
                quantiles=qs,
                ess=effective_sample_size(col) if col.size >= 10 else float(col.size),
            )
        )
    return out


def compare_runs(a: Stage2Output, b: Stage2Output) -> np.ndarray:
    """Per-parameter standardized mean difference of the population-mean
    draws: |mean_a - mean_b| / pooled sd. No pass/fail judgment here."""
    if a.p != b.p:
        raise ValueError("runs have different parameter sets")
    ma, mb = a.mu_draws.mean(axis=0), b.mu_draws.mean(axis=0)
    va, vb = a.mu_draws.var(axis=0, ddof=1), b.mu_draws.var(axis=0, ddof=1)
    pooled = np.sqrt(0.5 * (va + vb))
    return np.abs(ma - mb) / pooled


def stage2_parameter_table(out: Stage2Output) -> tuple[np.ndarray, list[str]]:
    """Flatten a stage-two output into (draws, names): population means,
    then each individual's coefficients when stored."""
    blocks = [out.mu_draws]
    names = [f"mu_beta{i}" for i in range(out.p)]
    if out.beta_draws is not None:
        k, j, p = out.beta_draws.shape
        blocks.append(out.beta_draws.reshape(k, j * p))
        names += [f"beta_{jj}_{i}" for jj in range(j) for i in range(p)]
    return np.hstack(blocks), names


def write_summary_csv(summaries: list[ChainSummary], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["parameter", "mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5", "ess"]
        )
        for s in summaries:
            writer.writerow(
                [s.name, repr(s.mean), repr(s.sd)]
                + [repr(q) for q in s.quantiles]
                + [repr(s.ess)]
            )


def write_interval_csv(summaries: list[ChainSummary], path: str) -> None:
    """Interval-plot data: posterior mean with 50% and 95% interval
    endpoints per parameter."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "mean", "lo50", "hi50", "lo95", "hi95"])
        for s in summaries:
            q = s.quantiles
            writer.writerow(
                [s.name, repr(s.mean), repr(q[1]), repr(q[3]), repr(q[0]), repr(q[4])]
            )
