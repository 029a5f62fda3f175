"""Simulation scenarios with ground-truth manifests, used by the CLI
``simulate-*`` commands and by the recovery/equivalence test suites.

Both scenarios draw individual coefficients from a known population and
record every true value, so downstream checks never re-derive truth.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .ctds import CellPath, simulate_ctds
from .fmm import PathDraws
from .probdist import (
    MixtureErrorParams,
    MvnParams,
    SpdFactor,
    mvn_sample,
    rotation_matrix,
    substream,
)
from .rsf import (
    PointSet,
    RasterGrid,
    covariate_columns,
    simulate_point_process,
    write_ascii_grid,
    write_telemetry,
)

__all__ = [
    "RsfScenario",
    "CtdsScenario",
    "gaussian_blob_raster",
    "terrain_rasters",
    "simulate_rsf_scenario",
    "simulate_ctds_scenario",
    "cell_path_positions",
    "true_path_pool",
    "write_rsf_scenario",
    "write_ctds_scenario",
]


def gaussian_blob_raster(
    size: int = 40, cellsize: float = 1.0, center=(0.35, 0.6), width: float = 0.25
) -> RasterGrid:
    """Single smooth covariate surface: a Gaussian bump on the unit square
    scaled to the grid."""
    xs = (np.arange(size) + 0.5) / size
    gx, gy = np.meshgrid(xs, xs[::-1])  # north row first
    vals = np.exp(-((gx - center[0]) ** 2 + (gy - center[1]) ** 2) / (2 * width**2))
    return RasterGrid(
        ncols=size, nrows=size, xll=0.0, yll=0.0, cellsize=cellsize, values=vals
    )


def terrain_rasters(size: int = 30, cellsize: float = 1.0) -> list[RasterGrid]:
    """Two smooth deterministic surfaces standing in for elevation and
    distance-to-forest."""
    xs = (np.arange(size) + 0.5) / size
    gx, gy = np.meshgrid(xs, xs[::-1])
    elevation = np.sin(2 * np.pi * gx) * 0.5 + gy
    dist_forest = np.sqrt((gx - 0.7) ** 2 + (gy - 0.3) ** 2)
    mk = lambda v: RasterGrid(
        ncols=size, nrows=size, xll=0.0, yll=0.0, cellsize=cellsize, values=v
    )
    return [mk(elevation), mk(dist_forest)]


@dataclass(frozen=True)
class RsfScenario:
    covariate: RasterGrid
    telemetry: list[PointSet]
    true_betas: np.ndarray  # J x 2
    mu_beta: np.ndarray
    sigma_beta: np.ndarray


@dataclass(frozen=True)
class CtdsScenario:
    covariates: list[RasterGrid]
    paths: list[CellPath]
    durations: np.ndarray
    telemetry: list[PointSet]
    true_betas: np.ndarray  # J x 3
    mu_beta: np.ndarray
    sigma_beta: np.ndarray


def simulate_rsf_scenario(
    seed: int = 0,
    n_individuals: int = 20,
    mean_fixes: int = 30,
    grid_size: int = 40,
    mu_slope: float = 1.0,
    sd_slope: float = 0.3,
) -> RsfScenario:
    """Point-process scenario: one blob covariate, J individuals with
    population-distributed selection slopes, roughly ``mean_fixes`` fixes
    each. The intercept is not identified by the conditioned simulation and
    its truth is recorded as 0."""
    cov = gaussian_blob_raster(size=grid_size)
    mu = np.array([0.0, mu_slope])
    sigma = np.diag([0.25**2, sd_slope**2])
    pop = MvnParams(mu, SpdFactor.from_matrix(sigma))
    telemetry = []
    betas = np.empty((n_individuals, 2))
    for j in range(n_individuals):
        rng = substream(seed, 10, j)
        betas[j] = mvn_sample(rng, pop)
        n_j = max(1, int(rng.poisson(mean_fixes)))
        telemetry.append(
            simulate_point_process([cov], betas[j], n_j, rng, individual_id=str(j))
        )
    return RsfScenario(
        covariate=cov,
        telemetry=telemetry,
        true_betas=betas,
        mu_beta=mu,
        sigma_beta=sigma,
    )


def cell_path_positions(path: CellPath, grid: RasterGrid, times: np.ndarray) -> np.ndarray:
    """Piecewise-constant positions (cell centers) of a cell path sampled
    at the given times."""
    idx = np.searchsorted(path.entry_times, times, side="right") - 1
    idx = np.clip(idx, 0, path.length - 1)
    return np.array([grid.cell_center(*path.cells[i]) for i in idx])


def simulate_ctds_scenario(
    seed: int = 0,
    n_individuals: int = 18,
    target_transitions: int = 450,
    grid_size: int = 30,
    obs_per_individual: int = 150,
    error_sd: tuple[float, float] = (0.6, 0.15),
    mixture_p: float = 0.5,
) -> CtdsScenario:
    """CTDS scenario: two static covariates, population-distributed
    motility coefficients, duration chosen so each individual makes about
    ``target_transitions`` moves; telemetry observes the cell-center path
    with rotated-mixture error."""
    covs = terrain_rasters(size=grid_size)
    mu = np.array([0.0, -0.4, 0.3])
    sigma = np.diag([0.15**2, 0.2**2, 0.2**2])
    pop = MvnParams(mu, SpdFactor.from_matrix(sigma))
    err = MixtureErrorParams(
        p=mixture_p,
        base_cov=SpdFactor.from_diagonal([error_sd[0] ** 2, error_sd[1] ** 2]),
    )
    h = rotation_matrix(err.rotation_angle)
    cov_mat = covariate_columns(covs, standardize=True)
    full = np.column_stack([np.ones(cov_mat.shape[0]), cov_mat])
    grid = covs[0]

    paths, telemetry, durations = [], [], np.empty(n_individuals)
    betas = np.empty((n_individuals, 3))
    for j in range(n_individuals):
        rng = substream(seed, 20, j)
        betas[j] = mvn_sample(rng, pop)
        # mean total exit rate over cells fixes the duration for the
        # transition budget
        mean_rate = 4.0 * float(np.exp(full @ betas[j]).mean())
        duration = target_transitions / mean_rate
        start = (
            int(rng.integers(grid.nrows // 4, 3 * grid.nrows // 4)),
            int(rng.integers(grid.ncols // 4, 3 * grid.ncols // 4)),
        )
        path = simulate_ctds(covs, betas[j], start, duration, rng)
        paths.append(path)
        durations[j] = duration
        times = np.linspace(0.0, duration, obs_per_individual)
        pos = cell_path_positions(path, grid, times)
        use_base = rng.uniform(size=obs_per_individual) < mixture_p
        noise = rng.standard_normal((obs_per_individual, 2)) * np.asarray(error_sd)
        noise[~use_base] = noise[~use_base] @ h.T
        telemetry.append(
            PointSet(individual_id=str(j), points=pos + noise, times=times)
        )
    return CtdsScenario(
        covariates=covs,
        paths=paths,
        durations=durations,
        telemetry=telemetry,
        true_betas=betas,
        mu_beta=mu,
        sigma_beta=sigma,
    )


def true_path_pool(
    scenario: CtdsScenario, j: int, dt: float = 0.05, n_paths: int = 1
) -> PathDraws:
    """Error-free imputation pool: the true cell-center path replicated
    ``n_paths`` times on a fine grid."""
    grid = scenario.covariates[0]
    duration = float(scenario.durations[j])
    # include every cell-entry time so no short residence is skipped
    times = np.unique(
        np.concatenate(
            [np.arange(0.0, duration + dt / 2, dt), scenario.paths[j].entry_times]
        )
    )
    pos = cell_path_positions(scenario.paths[j], grid, times)
    draws = np.repeat(pos[None], n_paths, axis=0)
    return PathDraws(individual_id=str(j), times=times, draws=draws)


def write_rsf_scenario(sc: RsfScenario, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_ascii_grid(sc.covariate, os.path.join(out_dir, "covariate.asc"))
    write_telemetry(sc.telemetry, os.path.join(out_dir, "telemetry.csv"))
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump(
            {
                "model": "rsf",
                "mu_beta": sc.mu_beta.tolist(),
                "sigma_beta": sc.sigma_beta.tolist(),
                "betas": sc.true_betas.tolist(),
            },
            fh,
            indent=1,
        )


def write_ctds_scenario(sc: CtdsScenario, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for i, grid in enumerate(sc.covariates):
        write_ascii_grid(grid, os.path.join(out_dir, f"covariate{i + 1}.asc"))
    write_telemetry(sc.telemetry, os.path.join(out_dir, "telemetry.csv"))
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump(
            {
                "model": "ctds",
                "mu_beta": sc.mu_beta.tolist(),
                "sigma_beta": sc.sigma_beta.tolist(),
                "betas": sc.true_betas.tolist(),
                "durations": sc.durations.tolist(),
                "n_transitions": [p.length - 1 for p in sc.paths],
            },
            fh,
            indent=1,
        )
