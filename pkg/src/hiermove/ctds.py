"""Continuous-time discrete-space movement: path discretization into
stay/move pairs, the Poisson-reparameterized likelihood with residence-time
offsets, trajectory simulation with competing exponential risks, and the
multiple-imputation individual model built from a path pool.

Covariates enter as static motility drivers: the design row of every
direction out of a cell carries that source cell's covariates, so the
coefficients scale the overall movement rate rather than its direction.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .fmm import PathDraws
from .probdist import MvnParams
from .rsf import RasterGrid, covariate_columns
from .stage1 import IndividualModel

__all__ = [
    "DIRECTIONS",
    "CellPath",
    "StayMovePairs",
    "CtdsDesign",
    "discretize_path",
    "extract_pairs",
    "encode_multinomial",
    "make_ctds_design",
    "ctds_loglik",
    "ctds_loglik_grad",
    "draw_event",
    "simulate_ctds",
    "CtdsModel",
    "make_ctds_model",
    "write_ctds_csv",
]

# direction codes; (drow, dcol) with row 0 the northernmost raster row
DIRECTIONS = ("N", "E", "S", "W")
_STEPS = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}
CENSORED = "censored"


@dataclass(frozen=True)
class CellPath:
    """Rook-adjacent cell visit sequence with strictly increasing entry times."""

    cells: np.ndarray  # L x 2 (row, col)
    entry_times: np.ndarray  # L

    def __post_init__(self):
        cells = np.atleast_2d(np.asarray(self.cells, dtype=int))
        times = np.atleast_1d(np.asarray(self.entry_times, dtype=float))
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "entry_times", times)
        if cells.shape[0] != times.size:
            raise ValueError("cells and entry_times disagree in length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("entry times must be strictly increasing")
        steps = np.abs(np.diff(cells, axis=0)).sum(axis=1)
        if steps.size and np.any(steps != 1):
            raise ValueError("consecutive cells must be rook-adjacent")

    @property
    def length(self) -> int:
        return self.cells.shape[0]


@dataclass(frozen=True)
class StayMovePairs:
    """CTDS sufficient statistics: per pair a residence time, the source
    cell, and the observed move direction; the final open-ended residence
    is censored and carries no move term."""

    tau: np.ndarray  # L residence times
    source: np.ndarray  # L x 2 source cells
    direction: np.ndarray  # L direction labels from DIRECTIONS
    censored_source: tuple[int, int]
    censored_tau: float

    def __post_init__(self):
        tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        object.__setattr__(self, "tau", tau)
        object.__setattr__(
            self, "source", np.asarray(self.source, dtype=int).reshape(-1, 2)
        )
        object.__setattr__(self, "direction", np.asarray(self.direction))
        if tau.size and np.any(tau <= 0):
            raise ValueError("residence times must be positive")
        if self.censored_tau < 0:
            raise ValueError("censored residence must be nonnegative")
        for d in self.direction:
            if d not in DIRECTIONS:
                raise ValueError(f"invalid direction {d!r}")

    @property
    def n_pairs(self) -> int:
        return self.tau.size

    @property
    def total_duration(self) -> float:
        return float(self.tau.sum() + self.censored_tau)


@dataclass(frozen=True)
class CtdsDesign:
    """Row-per-direction Poisson design: each row is one candidate move of
    one stay/move pair, carrying the source-cell covariates, the residence
    time as offset, and the 0/1 move indicator. Censored rows have
    pair_index -1 and y = 0."""

    pair_index: np.ndarray  # R ints, -1 for censored rows
    direction: np.ndarray  # R labels
    X: np.ndarray  # R x p
    tau: np.ndarray  # R offsets
    y: np.ndarray  # R 0/1 indicators

    def __post_init__(self):
        object.__setattr__(self, "pair_index", np.asarray(self.pair_index, dtype=int))
        object.__setattr__(self, "direction", np.asarray(self.direction))
        object.__setattr__(self, "X", np.atleast_2d(np.asarray(self.X, dtype=float)))
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if not np.all(np.isfinite(self.tau)) or np.any(self.tau <= 0):
            raise ValueError("offsets must be finite and positive")
        real = self.pair_index >= 0
        if real.any():
            counts = np.bincount(self.pair_index[real], weights=self.y[real])
            if not np.all(counts == 1):
                raise ValueError("each pair must have exactly one observed move")

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _boundary_crossing_order(grid, p0, p1, cell0, cell1):
    """For a diagonal sample step, order the two rook moves by which cell
    boundary the straight-line interpolant crosses first. Returns the two
    (direction, fraction-along-segment) legs."""
    (r0, c0), (r1, c1) = cell0, cell1
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    if c1 > c0:
        x_b, d_ew = grid.xll + c1 * grid.cellsize, "E"
    else:
        x_b, d_ew = grid.xll + c0 * grid.cellsize, "W"
    if r1 < r0:  # moving north: y increases past the top of cell r0
        y_b, d_ns = grid.yll + (grid.nrows - r0) * grid.cellsize, "N"
    else:
        y_b, d_ns = grid.yll + (grid.nrows - 1 - r0) * grid.cellsize, "S"
    s_x = (x_b - p0[0]) / dx
    s_y = (y_b - p0[1]) / dy
    if s_x <= s_y:
        return (d_ew, s_x), (d_ns, s_y)
    return (d_ns, s_y), (d_ew, s_x)


def discretize_path(times, positions, grid: RasterGrid) -> CellPath:
    """Map a fine-grid path realization to its cell visit sequence.

    Consecutive samples in the same cell are merged; a single-step jump to a
    diagonal neighbor is split into two rook moves ordered by the first
    boundary crossing of the linear interpolant; anything farther is an
    error (the time grid is too coarse).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape != (times.size, 2):
        raise ValueError("positions must be T x 2 matching times")
    cells: list[tuple[int, int]] = []
    entries: list[float] = []
    prev = None
    for i, (t, pos) in enumerate(zip(times, positions)):
        try:
            cell = grid.cell_of(pos[0], pos[1])
        except ValueError:
            raise ValueError(
                f"path leaves the raster extent at time {t} "
                f"(position {pos[0]}, {pos[1]})"
            )
        if prev is None:
            cells.append(cell)
            entries.append(float(t))
        elif cell != prev:
            dr, dc = abs(cell[0] - prev[0]), abs(cell[1] - prev[1])
            if dr + dc == 1:
                cells.append(cell)
                entries.append(float(t))
            elif dr == 1 and dc == 1:
                (d1, s1), _ = _boundary_crossing_order(
                    grid, positions[i - 1], pos, prev, cell
                )
                step = _STEPS[d1]
                mid = (prev[0] + step[0], prev[1] + step[1])
                t0 = times[i - 1]
                cells.append(mid)
                entries.append(float(t0 + s1 * (t - t0)))
                cells.append(cell)
                entries.append(float(t))
            else:
                raise ValueError(
                    f"jump beyond the first-order neighborhood at time {t}; "
                    "refine the path time grid"
                )
        prev = cell
    return CellPath(cells=np.asarray(cells), entry_times=np.asarray(entries))


def extract_pairs(cell_path: CellPath, end_time: float) -> StayMovePairs:
    """Turn a cell path into stay/move pairs; the last segment becomes the
    censored residence running to ``end_time``."""
    entries = cell_path.entry_times
    if end_time < entries[-1]:
        raise ValueError("end_time precedes the last cell entry")
    cells = cell_path.cells
    dirs = []
    for (r0, c0), (r1, c1) in zip(cells[:-1], cells[1:]):
        step = (r1 - r0, c1 - c0)
        dirs.append(next(d for d, s in _STEPS.items() if s == step))
    return StayMovePairs(
        tau=np.diff(entries),
        source=cells[:-1],
        direction=np.asarray(dirs),
        censored_source=tuple(cells[-1]),
        censored_tau=float(end_time - entries[-1]),
    )


def encode_multinomial(move: str) -> np.ndarray:
    """5-vector stay/move encoding: (up, right, stay, down, left)."""
    order = {"N": 0, "E": 1, "stay": 2, "S": 3, "W": 4}
    if move not in order:
        raise ValueError(f"invalid move code {move!r}")
    vec = np.zeros(5)
    vec[order[move]] = 1.0
    return vec


def _allowed_directions(grid: RasterGrid, row: int, col: int) -> list[str]:
    out = []
    for d, (dr, dc) in _STEPS.items():
        r, c = row + dr, col + dc
        if 0 <= r < grid.nrows and 0 <= c < grid.ncols:
            out.append(d)
    return out


def make_ctds_design(
    pairs: StayMovePairs,
    covariates: list[RasterGrid],
    grid: RasterGrid,
    standardize: bool = True,
) -> CtdsDesign:
    """Build the row-per-direction design from stay/move pairs. Static
    drivers: every direction row of a pair carries the source cell's
    intercept-plus-covariates vector. Directions leading off the grid are
    omitted (matching the reflecting simulation)."""
    cov = covariate_columns(covariates, standardize=standardize)
    full = np.column_stack([np.ones(cov.shape[0]), cov])
    ncols = grid.ncols

    pair_idx, direction, rows_x, tau, y = [], [], [], [], []

    def add_cell(l_idx, cell, t, obs_dir):
        r, c = int(cell[0]), int(cell[1])
        x_row = full[r * ncols + c]
        for d in _allowed_directions(grid, r, c):
            pair_idx.append(l_idx)
            direction.append(d)
            rows_x.append(x_row)
            tau.append(t)
            y.append(1.0 if d == obs_dir else 0.0)

    for l in range(pairs.n_pairs):
        add_cell(l, pairs.source[l], pairs.tau[l], pairs.direction[l])
    if pairs.censored_tau > 0:
        add_cell(-1, pairs.censored_source, pairs.censored_tau, None)
    return CtdsDesign(
        pair_index=np.asarray(pair_idx),
        direction=np.asarray(direction),
        X=np.asarray(rows_x),
        tau=np.asarray(tau),
        y=np.asarray(y),
    )


def ctds_loglik(design: CtdsDesign, beta) -> float:
    """Poisson form: sum over rows of y log(lambda) - tau lambda with
    lambda = exp(x'beta); censored rows contribute only the survival term."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.size != design.p:
        raise ValueError(f"beta length {beta.size}, design has p = {design.p}")
    eta = design.X @ beta
    return float(design.y @ eta - design.tau @ np.exp(eta))


def ctds_loglik_grad(design: CtdsDesign, beta) -> np.ndarray:
    eta = design.X @ np.atleast_1d(np.asarray(beta, dtype=float))
    return design.X.T @ (design.y - design.tau * np.exp(eta))


def draw_event(rates, rng: np.random.Generator) -> tuple[float, int]:
    """Competing exponential risks: residence time Exp(sum rates) and the
    winning direction index with probability rate / sum."""
    rates = np.atleast_1d(np.asarray(rates, dtype=float))
    total = rates.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError("all movement rates are zero")
    residence = rng.exponential(1.0 / total)
    which = int(rng.choice(rates.size, p=rates / total))
    return residence, which


def simulate_ctds(
    covariates: list[RasterGrid],
    beta,
    start_cell: tuple[int, int],
    duration: float,
    rng: np.random.Generator,
    standardize: bool = True,
) -> CellPath:
    """Simulate a trajectory: residence in each cell is exponential with
    the total outgoing rate, the exit direction multinomial in the
    per-direction rates; directions off the grid are removed from the risk
    set (reflecting boundary)."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.size != len(covariates) + 1:
        raise ValueError("beta length must be number of covariates + 1")
    grid = covariates[0]
    cov = covariate_columns(covariates, standardize=standardize)
    full = np.column_stack([np.ones(cov.shape[0]), cov])
    lam_cell = np.exp(full @ beta)
    if not np.all(np.isfinite(lam_cell)) or np.all(lam_cell <= 0):
        raise ValueError("non-finite or all-zero movement rates")

    cells = [tuple(start_cell)]
    entries = [0.0]
    t = 0.0
    r, c = int(start_cell[0]), int(start_cell[1])
    if not (0 <= r < grid.nrows and 0 <= c < grid.ncols):
        raise ValueError("start cell outside the grid")
    while True:
        dirs = _allowed_directions(grid, r, c)
        # static drivers: one motility rate per source cell, shared by all
        # allowed directions
        rates = np.full(len(dirs), lam_cell[r * grid.ncols + c])
        residence, which = draw_event(rates, rng)
        t = t + residence
        if t >= duration:
            break
        dr, dc = _STEPS[dirs[which]]
        r, c = r + dr, c + dc
        cells.append((r, c))
        entries.append(t)
    return CellPath(cells=np.asarray(cells), entry_times=np.asarray(entries))


@dataclass
class CtdsModel(IndividualModel):
    """Multiple-imputation CTDS model: the likelihood is evaluated against
    one of the precomputed imputation datasets, redrawn uniformly at the
    start of every MCMC iteration."""

    designs: list[CtdsDesign] = field(default_factory=list)
    beta_prior: MvnParams | None = None
    individual_id: str = "0"
    resamples_data: bool = True

    def __post_init__(self):
        if not self.designs:
            raise ValueError("CtdsModel requires at least one imputation dataset")
        if self.beta_prior is None:
            raise ValueError("CtdsModel requires a stage-one prior")
        p = self.designs[0].p
        for d in self.designs:
            if d.p != p:
                raise ValueError("imputation datasets disagree in dimension")
        if self.beta_prior.dim != p:
            raise ValueError("prior dimension does not match design")
        self._current = 0
        if len(self.designs) == 1:
            self.resamples_data = False

    def refresh_data(self, rng: np.random.Generator) -> None:
        self._current = int(rng.integers(len(self.designs)))

    def log_likelihood(self, beta, theta=None) -> float:
        return ctds_loglik(self.designs[self._current], beta)


def make_ctds_model(
    path_pool: PathDraws,
    covariates: list[RasterGrid],
    grid: RasterGrid,
    prior: MvnParams,
    standardize: bool = True,
) -> CtdsModel:
    """Precompute one stay/move dataset per path realization and wrap them
    in the multiple-imputation individual model."""
    designs = []
    end_time = float(path_pool.times[-1])
    for m in range(path_pool.n_paths):
        cp = discretize_path(path_pool.times, path_pool.draws[m], grid)
        pairs = extract_pairs(cp, end_time)
        designs.append(
            make_ctds_design(pairs, covariates, grid, standardize=standardize)
        )
    return CtdsModel(
        designs=designs, beta_prior=prior, individual_id=path_pool.individual_id
    )


def write_ctds_csv(design: CtdsDesign, path: str) -> None:
    """Dump the design for debugging and oracles: pair, direction, y, tau,
    then one column per covariate (intercept included as x1)."""
    p = design.p
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["pair", "direction", "y", "tau"] + [f"x{i + 1}" for i in range(p)]
        )
        for i in range(design.X.shape[0]):
            label = CENSORED if design.pair_index[i] < 0 else design.direction[i]
            writer.writerow(
                [int(design.pair_index[i]), label, int(design.y[i]),
                 repr(float(design.tau[i]))]
                + [repr(float(v)) for v in design.X[i]]
            )
