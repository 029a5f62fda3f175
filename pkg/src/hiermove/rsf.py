"""Resource-selection application: raster grids, weighted-distribution
point-process simulation, grid-count preprocessing, and the Poisson
individual-level model whose intercept absorbs the point-process
normalizing constant.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .probdist import MvnParams
from .stage1 import IndividualModel

__all__ = [
    "RasterGrid",
    "PointSet",
    "RsfDesign",
    "read_ascii_grid",
    "write_ascii_grid",
    "read_telemetry",
    "write_telemetry",
    "make_rsf_design",
    "simulate_point_process",
    "bin_counts",
    "rsf_loglik",
    "rsf_loglik_grad",
    "RsfModel",
    "make_rsf_model",
]


@dataclass(frozen=True)
class RasterGrid:
    """Regular 2-D grid, north-up: ``values[0]`` is the northernmost row.

    Cells are half-open in both axes: a point belongs to the cell covering
    ``[x, x + cellsize)`` and ``[y, y + cellsize)``.
    """

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.nrows, self.ncols):
            raise ValueError(
                f"values shape {v.shape} does not match header "
                f"({self.nrows}, {self.ncols})"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("raster contains non-finite values")
        if self.cellsize <= 0:
            raise ValueError("cellsize must be positive")

    @property
    def n_cells(self) -> int:
        return self.ncols * self.nrows

    @property
    def xmax(self) -> float:
        return self.xll + self.ncols * self.cellsize

    @property
    def ymax(self) -> float:
        return self.yll + self.nrows * self.cellsize

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the point, or ValueError if outside the extent."""
        col = math.floor((x - self.xll) / self.cellsize)
        row_s = math.floor((y - self.yll) / self.cellsize)
        if not (0 <= col < self.ncols and 0 <= row_s < self.nrows):
            raise ValueError(f"point ({x}, {y}) outside raster extent")
        return self.nrows - 1 - row_s, col

    def cell_index(self, x: float, y: float) -> int:
        row, col = self.cell_of(x, y)
        return row * self.ncols + col

    def cell_origin(self, row: int, col: int) -> tuple[float, float]:
        """South-west corner of the cell."""
        return (
            self.xll + col * self.cellsize,
            self.yll + (self.nrows - 1 - row) * self.cellsize,
        )

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        x0, y0 = self.cell_origin(row, col)
        return x0 + 0.5 * self.cellsize, y0 + 0.5 * self.cellsize

    def aligned_with(self, other: "RasterGrid") -> bool:
        return (
            self.ncols == other.ncols
            and self.nrows == other.nrows
            and np.isclose(self.xll, other.xll)
            and np.isclose(self.yll, other.yll)
            and np.isclose(self.cellsize, other.cellsize)
        )


@dataclass(frozen=True)
class PointSet:
    individual_id: str
    points: np.ndarray  # n x 2
    times: np.ndarray | None = None
    error_class: np.ndarray | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if pts.shape[1] != 2:
            raise ValueError("points must be n x 2")
        if self.times is not None:
            object.__setattr__(
                self, "times", np.asarray(self.times, dtype=float)
            )

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RsfDesign:
    """Cell-level design matrix (intercept first) in row-major cell order."""

    X: np.ndarray  # m x p
    cell_area: float

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.X, dtype=float))
        object.__setattr__(self, "X", x)
        if not np.allclose(x[:, 0], 1.0):
            raise ValueError("first design column must be the intercept")
        if self.cell_area <= 0:
            raise ValueError("cell_area must be positive")

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.X.shape[0]


# --- file formats ---------------------------------------------------------


def read_ascii_grid(path: str) -> RasterGrid:
    """Read a 6-line-header ASCII grid (ncols/nrows/xllcorner/yllcorner/
    cellsize/NODATA_value followed by row-major values, north row first)."""
    with open(path) as fh:
        header = {}
        for _ in range(6):
            key, val = fh.readline().split()
            header[key.lower()] = float(val)
        body = np.loadtxt(fh)
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    return RasterGrid(
        ncols=ncols,
        nrows=nrows,
        xll=header["xllcorner"],
        yll=header["yllcorner"],
        cellsize=header["cellsize"],
        values=body.reshape(nrows, ncols),
    )


def write_ascii_grid(grid: RasterGrid, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"ncols {grid.ncols}\n")
        fh.write(f"nrows {grid.nrows}\n")
        fh.write(f"xllcorner {grid.xll!r}\n")
        fh.write(f"yllcorner {grid.yll!r}\n")
        fh.write(f"cellsize {grid.cellsize!r}\n")
        fh.write("NODATA_value -9999\n")
        for row in grid.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_telemetry(path: str) -> list[PointSet]:
    """Read a telemetry CSV with header ``id,t,x,y[,error_class]`` into one
    PointSet per individual, in first-appearance order."""
    order: list[str] = []
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "t", "x", "y"} <= set(
            reader.fieldnames
        ):
            raise ValueError(f"telemetry file {path} must have id,t,x,y columns")
        has_class = "error_class" in reader.fieldnames
        for rec in reader:
            iid = rec["id"]
            if iid not in rows:
                rows[iid] = []
                order.append(iid)
            rows[iid].append(
                (
                    float(rec["t"]),
                    float(rec["x"]),
                    float(rec["y"]),
                    rec["error_class"] if has_class else None,
                )
            )
    out = []
    for iid in order:
        recs = rows[iid]
        out.append(
            PointSet(
                individual_id=iid,
                points=np.array([(x, y) for _, x, y, _ in recs]),
                times=np.array([t for t, *_ in recs]),
                error_class=(
                    np.array([c for *_, c in recs]) if has_class else None
                ),
            )
        )
    return out


def write_telemetry(sets: list[PointSet], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        has_class = any(s.error_class is not None for s in sets)
        writer.writerow(["id", "t", "x", "y"] + (["error_class"] if has_class else []))
        for s in sets:
            times = s.times if s.times is not None else np.arange(s.n, dtype=float)
            for i in range(s.n):
                row = [s.individual_id, repr(float(times[i])),
                       repr(float(s.points[i, 0])), repr(float(s.points[i, 1]))]
                if has_class:
                    row.append("" if s.error_class is None else s.error_class[i])
                writer.writerow(row)


# --- design and likelihood ------------------------------------------------


def covariate_columns(covariates: list[RasterGrid], standardize: bool = True) -> np.ndarray:
    """Stack rasters into an (n_cells, n_cov) matrix in row-major cell
    order, optionally standardized to mean 0 / sd 1 across cells."""
    if not covariates:
        raise ValueError("need at least one covariate raster")
    base = covariates[0]
    cols = []
    for grid in covariates:
        if not grid.aligned_with(base):
            raise ValueError("covariate rasters are not aligned")
        col = grid.values.reshape(-1).astype(float)
        if standardize:
            sd = col.std()
            if sd == 0:
                raise ValueError("constant covariate cannot be standardized")
            col = (col - col.mean()) / sd
        cols.append(col)
    return np.column_stack(cols)


def make_rsf_design(covariates: list[RasterGrid], standardize: bool = True) -> RsfDesign:
    cov = covariate_columns(covariates, standardize=standardize)
    x = np.column_stack([np.ones(cov.shape[0]), cov])
    return RsfDesign(X=x, cell_area=covariates[0].cellsize ** 2)


def cell_probabilities(design: RsfDesign, beta: np.ndarray) -> np.ndarray:
    """Multinomial cell probabilities proportional to exp(x'beta)."""
    eta = design.X @ np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("non-finite cell intensities")
    eta = eta - eta.max()
    w = np.exp(eta)
    return w / w.sum()


def simulate_point_process(
    covariates: list[RasterGrid],
    beta: np.ndarray,
    n: int,
    rng: np.random.Generator,
    individual_id: str = "0",
    standardize: bool = True,
) -> PointSet:
    """Simulate n fixes from the weighted distribution with exponential
    selection and uniform availability: pick cells multinomially with
    probability proportional to exp(x'beta), then place each point
    uniformly inside its cell."""
    if n <= 0:
        raise ValueError("n must be positive")
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.size != len(covariates) + 1:
        raise ValueError("beta length must be number of covariates + 1")
    design = make_rsf_design(covariates, standardize=standardize)
    probs = cell_probabilities(design, beta)
    grid = covariates[0]
    counts = rng.multinomial(n, probs)
    pts = np.empty((n, 2))
    k = 0
    for idx in np.flatnonzero(counts):
        row, col = divmod(idx, grid.ncols)
        x0, y0 = grid.cell_origin(row, col)
        c = counts[idx]
        pts[k : k + c, 0] = x0 + grid.cellsize * rng.uniform(size=c)
        pts[k : k + c, 1] = y0 + grid.cellsize * rng.uniform(size=c)
        k += c
    return PointSet(individual_id=individual_id, points=pts)


def bin_counts(points: PointSet, grid: RasterGrid) -> np.ndarray:
    """Count fixes per cell (row-major order); out-of-extent points are
    reported with their index."""
    y = np.zeros(grid.n_cells, dtype=int)
    for i, (x, yy) in enumerate(points.points):
        try:
            y[grid.cell_index(x, yy)] += 1
        except ValueError:
            raise ValueError(
                f"point {i} of individual {points.individual_id} at "
                f"({x}, {yy}) lies outside the raster extent"
            )
    return y


def rsf_loglik(y: np.ndarray, design: RsfDesign, beta: np.ndarray) -> float:
    """Poisson log likelihood sum_i [y_i x_i'b - exp(x_i'b)], dropping the
    constant -log y_i! term."""
    y = np.asarray(y, dtype=float)
    if y.size != design.m:
        raise ValueError(f"y has {y.size} cells, design has {design.m}")
    eta = design.X @ np.atleast_1d(np.asarray(beta, dtype=float))
    return float(y @ eta - np.exp(eta).sum())


def rsf_loglik_grad(y: np.ndarray, design: RsfDesign, beta: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    eta = design.X @ np.atleast_1d(np.asarray(beta, dtype=float))
    return design.X.T @ (y - np.exp(eta))


@dataclass
class RsfModel(IndividualModel):
    """Poisson RSF individual model; no auxiliary parameters."""

    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    design: RsfDesign | None = None
    beta_prior: MvnParams | None = None
    individual_id: str = "0"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.design is None or self.beta_prior is None:
            raise ValueError("RsfModel requires y, design and beta_prior")
        if self.y.size != self.design.m:
            raise ValueError("count vector does not match design")
        if self.beta_prior.dim != self.design.p:
            raise ValueError("prior dimension does not match design")

    def log_likelihood(self, beta, theta=None) -> float:
        return rsf_loglik(self.y, self.design, beta)


def make_rsf_model(y, design: RsfDesign, prior: MvnParams, individual_id="0") -> RsfModel:
    return RsfModel(y=y, design=design, beta_prior=prior, individual_id=str(individual_id))
