import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiermove.probdist import MvnParams, SpdFactor, substream
from hiermove.rsf import (
    PointSet,
    RasterGrid,
    RsfDesign,
    bin_counts,
    cell_probabilities,
    covariate_columns,
    make_rsf_design,
    make_rsf_model,
    read_ascii_grid,
    read_telemetry,
    rsf_loglik,
    rsf_loglik_grad,
    simulate_point_process,
    write_ascii_grid,
    write_telemetry,
)
from hiermove.scenarios import gaussian_blob_raster


def small_grid(values=None, size=4):
    if values is None:
        values = np.arange(size * size, dtype=float).reshape(size, size)
    return RasterGrid(
        ncols=size, nrows=size, xll=0.0, yll=0.0, cellsize=1.0, values=values
    )


class TestRasterGrid:
    def test_cell_of_northwest_origin(self):
        g = small_grid()
        # values[0] is the northern row, so the lowest y maps to the last row
        assert g.cell_of(0.5, 0.5) == (3, 0)
        assert g.cell_of(0.5, 3.5) == (0, 0)
        assert g.cell_of(3.5, 0.5) == (3, 3)

    def test_half_open_edges(self):
        g = small_grid()
        assert g.cell_of(1.0, 1.0) == (2, 1)  # boundary belongs to upper cell
        assert g.cell_of(0.0, 0.0) == (3, 0)
        with pytest.raises(ValueError, match="outside"):
            g.cell_of(4.0, 2.0)  # east edge is excluded

    def test_center_round_trip(self):
        g = small_grid()
        for row in range(4):
            for col in range(4):
                assert g.cell_of(*g.cell_center(row, col)) == (row, col)

    def test_offset_origin(self):
        g = RasterGrid(
            ncols=2, nrows=2, xll=-10.0, yll=5.0, cellsize=2.5, values=np.zeros((2, 2))
        )
        assert g.cell_of(-9.0, 6.0) == (1, 0)
        assert g.cell_of(-6.0, 9.0) == (0, 1)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="shape"):
            RasterGrid(ncols=3, nrows=2, xll=0, yll=0, cellsize=1, values=np.zeros((3, 3)))

    def test_nonfinite_rejected(self):
        vals = np.zeros((2, 2))
        vals[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            RasterGrid(ncols=2, nrows=2, xll=0, yll=0, cellsize=1, values=vals)


class TestAsciiGridIO:
    def test_round_trip(self, tmp_path):
        g = gaussian_blob_raster(size=7)
        path = str(tmp_path / "g.asc")
        write_ascii_grid(g, path)
        back = read_ascii_grid(path)
        assert back.aligned_with(g)
        assert np.array_equal(back.values, g.values)

    def test_header_parsed(self, tmp_path):
        path = tmp_path / "h.asc"
        path.write_text(
            "ncols 2\nnrows 3\nxllcorner 1.5\nyllcorner -2.0\ncellsize 0.5\n"
            "NODATA_value -9999\n1 2\n3 4\n5 6\n"
        )
        g = read_ascii_grid(str(path))
        assert (g.ncols, g.nrows, g.xll, g.yll, g.cellsize) == (2, 3, 1.5, -2.0, 0.5)
        assert g.values[0, 1] == 2.0


class TestTelemetryIO:
    def test_round_trip(self, tmp_path):
        sets = [
            PointSet("a", np.array([[0.1, 0.2], [0.3, 0.4]]), times=np.array([0.0, 1.0])),
            PointSet("b", np.array([[1.5, 2.5]]), times=np.array([0.5])),
        ]
        path = str(tmp_path / "t.csv")
        write_telemetry(sets, path)
        back = read_telemetry(path)
        assert [s.individual_id for s in back] == ["a", "b"]
        assert np.array_equal(back[0].points, sets[0].points)
        assert np.array_equal(back[1].times, sets[1].times)

    def test_error_class_preserved(self, tmp_path):
        s = PointSet(
            "a",
            np.array([[0.0, 0.0], [1.0, 1.0]]),
            times=np.array([0.0, 1.0]),
            error_class=np.array(["base", "rotated"]),
        )
        path = str(tmp_path / "t.csv")
        write_telemetry([s], path)
        back = read_telemetry(path)
        assert list(back[0].error_class) == ["base", "rotated"]

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,x,y\n0,1,2\n")
        with pytest.raises(ValueError, match="id,t,x,y"):
            read_telemetry(str(path))


class TestDesign:
    def test_standardized_columns(self):
        design = make_rsf_design([small_grid()])
        assert design.X.shape == (16, 2)
        assert np.allclose(design.X[:, 0], 1.0)
        assert design.X[:, 1].mean() == pytest.approx(0.0, abs=1e-12)
        assert design.X[:, 1].std() == pytest.approx(1.0)

    def test_row_major_order(self):
        g = small_grid()
        design = make_rsf_design([g], standardize=False)
        assert np.array_equal(design.X[:, 1], g.values.reshape(-1))

    def test_misaligned_rasters(self):
        a = small_grid(size=4)
        b = RasterGrid(ncols=4, nrows=4, xll=1.0, yll=0.0, cellsize=1.0,
                       values=np.zeros((4, 4)))
        with pytest.raises(ValueError, match="aligned"):
            covariate_columns([a, b])

    def test_constant_covariate(self):
        with pytest.raises(ValueError, match="constant"):
            covariate_columns([small_grid(values=np.ones((4, 4)))])

    def test_intercept_enforced(self):
        with pytest.raises(ValueError, match="intercept"):
            RsfDesign(X=np.full((4, 2), 2.0), cell_area=1.0)


class TestSimulateAndBin:
    def test_counts_track_selection_weights(self):
        # binary covariate: exact multinomial probabilities are available
        vals = np.zeros((4, 4))
        vals[:2] = 1.0
        g = small_grid(values=vals)
        beta = np.array([0.0, 1.5])
        rng = substream(0, 100)
        pts = simulate_point_process([g], beta, 40_000, rng, standardize=False)
        y = bin_counts(pts, g)
        p_hot = np.exp(1.5) / (8 * np.exp(1.5) + 8)
        frac_hot = y[:8].sum() / 40_000
        assert frac_hot == pytest.approx(8 * p_hot, abs=0.01)

    def test_bin_inverts_simulation(self):
        g = gaussian_blob_raster(size=10)
        rng = substream(1, 100)
        pts = simulate_point_process([g], [0.0, 1.0], 500, rng)
        y = bin_counts(pts, g)
        assert y.sum() == 500
        assert np.all(y >= 0)

    def test_out_of_extent_reports_index(self):
        g = small_grid()
        pts = PointSet("z", np.array([[0.5, 0.5], [9.0, 9.0]]))
        with pytest.raises(ValueError, match="point 1 of individual z"):
            bin_counts(pts, g)

    def test_beta_length_checked(self):
        with pytest.raises(ValueError, match="beta length"):
            simulate_point_process([small_grid()], [0.0], 10, substream(0, 0))

    def test_uniform_when_no_selection(self):
        g = small_grid()
        probs = cell_probabilities(make_rsf_design([g]), [0.0, 0.0])
        assert np.allclose(probs, 1 / 16)


class TestLoglik:
    def design(self):
        return make_rsf_design([gaussian_blob_raster(size=6)])

    def test_matches_scipy_poisson_oracle(self):
        from scipy import stats

        design = self.design()
        rng = np.random.default_rng(2)
        beta = np.array([-1.0, 0.7])
        lam = np.exp(design.X @ beta)
        y = rng.poisson(lam)
        import math

        oracle = stats.poisson.logpmf(y, lam).sum() + sum(
            math.lgamma(int(v) + 1) for v in y
        )
        assert rsf_loglik(y, design, beta) == pytest.approx(oracle, abs=1e-8)

    def test_grad_matches_finite_differences(self):
        design = self.design()
        rng = np.random.default_rng(3)
        y = rng.poisson(1.0, size=design.m)
        beta = np.array([0.2, -0.4])
        g = rsf_loglik_grad(y, design, beta)
        h = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (rsf_loglik(y, design, beta + e) - rsf_loglik(y, design, beta - e)) / (
                2 * h
            )
            assert g[i] == pytest.approx(fd, rel=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rsf_loglik(np.zeros(5), self.design(), [0.0, 0.0])

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-5, 5))
    def test_intercept_shift_invariance_of_differences(self, b0, b1, shift):
        # conditioned on the total count, only the non-intercept part
        # matters: a constant intercept shift changes the log likelihood by
        # n*shift - (total intensity change), and the *normalized* cell
        # probabilities are unchanged
        design = self.design()
        probs_a = cell_probabilities(design, [b0, b1])
        probs_b = cell_probabilities(design, [b0 + shift, b1])
        assert np.allclose(probs_a, probs_b, atol=1e-12)


class TestRsfModel:
    def test_posterior_mode_near_mle(self):
        # flat-ish prior: the log posterior gradient at the Poisson MLE is
        # close to zero
        from scipy.optimize import minimize

        design = make_rsf_design([gaussian_blob_raster(size=8)])
        rng = np.random.default_rng(4)
        truth = np.array([-0.5, 0.9])
        y = rng.poisson(np.exp(design.X @ truth))
        prior = MvnParams(np.zeros(2), SpdFactor.from_diagonal([100.0, 100.0]))
        model = make_rsf_model(y, design, prior, "7")
        res = minimize(
            lambda b: -model.log_likelihood(b) - model.log_prior_beta(b),
            np.zeros(2),
            jac=lambda b: -(rsf_loglik_grad(y, design, b) - b / 100.0),
            method="BFGS",
        )
        assert np.all(np.abs(res.x - truth) < 0.2)
        assert model.individual_id == "7"

    def test_validation(self):
        design = make_rsf_design([small_grid()])
        prior = MvnParams(np.zeros(2), SpdFactor.identity(2))
        with pytest.raises(ValueError, match="count"):
            make_rsf_model(np.zeros(3), design, prior)
        with pytest.raises(ValueError, match="prior"):
            make_rsf_model(
                np.zeros(16),
                design,
                MvnParams(np.zeros(3), SpdFactor.identity(3)),
            )
