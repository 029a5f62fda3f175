import numpy as np
import pytest

from hiermove.probdist import (
    MvnParams,
    SpdFactor,
    WishartParams,
    mvn_logpdf,
    substream,
)
from hiermove.stage1 import ChainConfig, DrawMatrix
from hiermove.stage2 import (
    HyperPriors,
    PopulationState,
    Stage2Output,
    Stage2Resampler,
    gibbs_update_mu,
    gibbs_update_sigma_inv,
    load_stage2_output,
    mh_resample_beta,
    mu_full_conditional,
    run_stage2,
    save_stage2_output,
)


def hyper_2d():
    return HyperPriors.default(2)


class TestHyperPriors:
    def test_default_shapes(self):
        h = HyperPriors.default(3)
        assert np.array_equal(h.mu0.mean, np.zeros(3))
        assert np.allclose(h.mu0.covariance.matrix(), 100 * np.eye(3))
        assert h.wishart.dof == 3
        assert np.allclose(h.wishart.scale.matrix(), np.eye(3) / 3)

    def test_default_dof_tracks_dim(self):
        assert HyperPriors.default(5).wishart.dof == 5

    def test_dimension_disagreement(self):
        with pytest.raises(ValueError):
            HyperPriors(
                mu0=MvnParams(np.zeros(2), SpdFactor.identity(2)),
                wishart=WishartParams(scale=SpdFactor.identity(3), dof=3),
            )


class TestMuConditional:
    def test_matches_explicit_inverse_formula(self):
        rng = np.random.default_rng(0)
        betas = rng.standard_normal((6, 2))
        sigma_inv = SpdFactor.from_matrix([[2.0, 0.4], [0.4, 1.5]])
        h = hyper_2d()
        params = mu_full_conditional(betas, sigma_inv, h)
        a = 6 * sigma_inv.matrix() + np.eye(2) / 100
        b = sigma_inv.matrix() @ betas.sum(axis=0)
        assert np.allclose(params.mean, np.linalg.solve(a, b), atol=1e-12)
        assert np.allclose(params.covariance.matrix(), np.linalg.inv(a), atol=1e-12)

    def test_no_individuals_returns_prior(self):
        h = hyper_2d()
        params = mu_full_conditional(np.empty((0, 2)), SpdFactor.identity(2), h)
        assert np.allclose(params.mean, h.mu0.mean)
        assert np.allclose(params.covariance.matrix(), h.mu0.covariance.matrix())

    def test_grid_integration_oracle_1d(self):
        # independent oracle: normalize exp(sum log-lik + log-prior) on a grid
        h = HyperPriors(
            mu0=MvnParams(np.zeros(1), SpdFactor.from_diagonal([100.0])),
            wishart=WishartParams(scale=SpdFactor.from_diagonal([1 / 3]), dof=3),
        )
        betas = np.array([[0.8], [1.3], [0.5]])
        sigma_inv = SpdFactor.from_diagonal([4.0])
        grid = np.linspace(-5, 7, 2001)
        log_dens = -0.5 * 4.0 * ((betas.ravel()[:, None] - grid) ** 2).sum(
            axis=0
        ) - 0.5 * grid**2 / 100.0
        w = np.exp(log_dens - log_dens.max())
        w /= w.sum()
        grid_mean = float(w @ grid)
        grid_var = float(w @ (grid - grid_mean) ** 2)
        params = mu_full_conditional(betas, sigma_inv, h)
        assert params.mean[0] == pytest.approx(grid_mean, abs=1e-4)
        assert params.covariance.matrix()[0, 0] == pytest.approx(grid_var, abs=1e-4)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mu_full_conditional(np.zeros((2, 3)), SpdFactor.identity(2), hyper_2d())


class TestGibbsUpdates:
    def test_mu_monte_carlo_moments(self):
        h = hyper_2d()
        betas = np.array([[1.0, -1.0], [1.4, -0.6], [0.6, -1.4]])
        sigma_inv = SpdFactor.from_diagonal([4.0, 4.0])
        params = mu_full_conditional(betas, sigma_inv, h)
        rng = np.random.default_rng(1)
        draws = np.array(
            [gibbs_update_mu(betas, sigma_inv, h, rng) for _ in range(40_000)]
        )
        assert np.allclose(draws.mean(axis=0), params.mean, atol=0.01)
        assert np.allclose(np.cov(draws.T), params.covariance.matrix(), atol=0.01)

    def test_sigma_inv_monte_carlo_mean(self):
        # conditional is Wishart with mean dof_post * scale_post
        h = hyper_2d()
        mu = np.array([0.0, 0.0])
        betas = np.array([[0.5, 0.2], [-0.3, 0.4], [0.1, -0.6], [0.2, 0.1]])
        resid = betas - mu
        scale_post = np.linalg.inv(3 * np.eye(2) + resid.T @ resid)
        expected = (h.wishart.dof + 4) * scale_post
        rng = np.random.default_rng(2)
        acc = np.zeros((2, 2))
        n = 40_000
        for _ in range(n):
            acc += gibbs_update_sigma_inv(betas, mu, h, rng).matrix()
        assert np.allclose(acc / n, expected, atol=0.02 * np.abs(expected).max())


def make_pool(draws, prior_mean, prior_cov, individual_id="0"):
    draws = np.atleast_2d(np.asarray(draws, float))
    return DrawMatrix(
        individual_id=individual_id,
        draws=draws,
        acceptance_rate=0.4,
        stage1_prior=MvnParams(
            np.asarray(prior_mean, float), SpdFactor.from_matrix(prior_cov)
        ),
        p=draws.shape[1],
    )


class TestResampleStep:
    def state_1d(self, beta, mu, sigma):
        return PopulationState(
            mu_beta=np.array([mu]),
            sigma_inv=SpdFactor.from_diagonal([1.0 / sigma]),
            betas=np.array([[beta]]),
            pool_indices=np.array([0]),
        )

    def test_always_accepts_when_process_equals_stage1_prior(self):
        # the ratio collapses to 1 when the pool prior matches the process
        rng = np.random.default_rng(3)
        pool = make_pool(rng.standard_normal((50, 1)), [0.0], [[1.0]])
        state = self.state_1d(beta=pool.draws[0, 0], mu=0.0, sigma=1.0)
        n_acc = 0
        for _ in range(300):
            _, _, acc = mh_resample_beta(0, pool, state, rng)
            n_acc += acc
        assert n_acc == 300

    def test_acceptance_frequency_matches_hand_ratio(self):
        # frozen candidate/current pair: acceptance must occur with
        # probability min(1, r) computed through the density oracle
        cur, cand = 0.2, 1.0
        mu, sigma, pm, pv = 1.5, 0.25, 0.0, 4.0
        pool = make_pool([[cand]], [pm], [[pv]])
        lp = lambda x, m, v: mvn_logpdf(
            [x], MvnParams(np.array([m]), SpdFactor.from_diagonal([v]))
        )
        log_r = (lp(cand, mu, sigma) + lp(cur, pm, pv)) - (
            lp(cur, mu, sigma) + lp(cand, pm, pv)
        )
        p_acc = min(1.0, np.exp(log_r))
        rng = np.random.default_rng(4)
        n, hits = 40_000, 0
        for _ in range(n):
            state = self.state_1d(beta=cur, mu=mu, sigma=sigma)
            _, _, acc = mh_resample_beta(0, pool, state, rng)
            hits += acc
        assert hits / n == pytest.approx(p_acc, abs=0.01)

    def test_hand_worked_scalar_ratio(self):
        # beta* = 1 from a pool with prior N(0, 100), current beta = 0,
        # process N(1, 1): the four log densities give
        # 0 - (-0.5) + 0 - (-0.005) = 0.505
        from hiermove.stage2 import resample_log_ratio

        prior = MvnParams(np.zeros(1), SpdFactor.from_diagonal([100.0]))
        log_r = resample_log_ratio(
            np.array([1.0]),
            np.array([0.0]),
            np.array([1.0]),
            SpdFactor.from_diagonal([1.0]),
            prior,
        )
        lp = lambda x, m, v: mvn_logpdf(
            [x], MvnParams(np.array([m]), SpdFactor.from_diagonal([v]))
        )
        oracle = (lp(1, 1, 1) + lp(0, 0, 100)) - (lp(0, 1, 1) + lp(1, 0, 100))
        assert log_r == pytest.approx(oracle, abs=1e-14)
        assert log_r == pytest.approx(0.505, abs=1e-12)

    def test_rejection_keeps_current(self):
        # candidate far in the process tail but typical under the pool prior
        pool = make_pool([[8.0]], [0.0], [[100.0]])
        rng = np.random.default_rng(5)
        state = self.state_1d(beta=0.0, mu=0.0, sigma=0.01)
        beta, idx, acc = mh_resample_beta(0, pool, state, rng)
        assert not acc
        assert beta[0] == 0.0
        assert idx == 0

    def test_empty_pool(self):
        pool = make_pool([[0.0]], [0.0], [[1.0]])
        object.__setattr__(pool, "draws", np.empty((0, 1)))
        state = self.state_1d(0.0, 0.0, 1.0)
        with pytest.raises(ValueError, match="empty"):
            mh_resample_beta(0, pool, state, np.random.default_rng(0))


class TestRunStage2:
    def pools(self, j=4, k=400, seed=0):
        rng = np.random.default_rng(seed)
        out = []
        for i in range(j):
            center = rng.normal(1.0, 0.3, size=2)
            draws = center + 0.2 * rng.standard_normal((k, 2))
            out.append(make_pool(draws, [0, 0], 100 * np.eye(2), str(i)))
        return out

    def test_shapes_and_thinning(self):
        cfg = ChainConfig(iterations=300, burnin=100, thin=2, seed=1)
        out = run_stage2(self.pools(), hyper_2d(), cfg, substream(1, 9))
        assert out.mu_draws.shape == (100, 2)
        assert out.sigma_inv_draws.shape == (100, 2, 2)
        assert out.beta_draws.shape == (100, 4, 2)
        assert out.acceptance_rates.shape == (4,)

    def test_betas_come_from_pools(self):
        pools = self.pools()
        cfg = ChainConfig(iterations=200, burnin=50, seed=2)
        out = run_stage2(pools, hyper_2d(), cfg, substream(2, 9))
        for j, pool in enumerate(pools):
            for row in out.beta_draws[:, j]:
                assert np.any(np.all(pool.draws == row, axis=1))

    def test_mu_tracks_pool_centers(self):
        pools = self.pools(j=8, k=800)
        cfg = ChainConfig(iterations=3000, burnin=500, seed=3)
        out = run_stage2(pools, hyper_2d(), cfg, substream(3, 9))
        centers = np.array([p.draws.mean(axis=0) for p in pools])
        assert np.all(np.abs(out.mu_draws.mean(axis=0) - centers.mean(axis=0)) < 0.25)

    def test_deterministic(self):
        cfg = ChainConfig(iterations=200, burnin=50, seed=4)
        a = run_stage2(self.pools(), hyper_2d(), cfg, substream(4, 9))
        b = run_stage2(self.pools(), hyper_2d(), cfg, substream(4, 9))
        assert np.array_equal(a.mu_draws, b.mu_draws)
        assert np.array_equal(a.sigma_inv_draws, b.sigma_inv_draws)

    def test_low_acceptance_warns(self):
        # near-degenerate hyperpriors pin the population at N(0, 1e-4 I);
        # only one pool row sits there, so once the chain finds it nearly
        # every proposal is rejected
        rows = np.column_stack([np.arange(200.0), np.zeros(200)])
        pool = make_pool(rows, [0, 0], 1e6 * np.eye(2), "stuck")
        hyper = HyperPriors(
            mu0=MvnParams(np.zeros(2), SpdFactor.from_diagonal([1e-8, 1e-8])),
            wishart=WishartParams(
                scale=SpdFactor.from_diagonal([1e-2, 1e-2]), dof=1e6
            ),
        )
        cfg = ChainConfig(iterations=2600, burnin=2000, seed=5)
        with pytest.warns(RuntimeWarning, match="stuck"):
            run_stage2([pool], hyper, cfg, substream(5, 9))

    def test_dimension_mismatch(self):
        bad = [make_pool(np.zeros((5, 3)), [0, 0, 0], np.eye(3))]
        cfg = ChainConfig(iterations=10, burnin=1)
        with pytest.raises(ValueError, match="dimension"):
            run_stage2(bad, hyper_2d(), cfg, substream(0, 9))

    def test_estimator_wrapper(self):
        est = Stage2Resampler(iterations=200, burnin=50, seed=6)
        est.fit(self.pools())
        assert est.mu_draws_.shape == (150, 2)
        assert est.get_params()["seed"] == 6


class TestPersistence:
    def output(self):
        cfg = ChainConfig(iterations=120, burnin=20, seed=7)
        rng = np.random.default_rng(7)
        pools = [
            make_pool(
                rng.normal(1.0, 0.3, size=(200, 2)), [0, 0], 100 * np.eye(2), str(i)
            )
            for i in range(3)
        ]
        return run_stage2(pools, hyper_2d(), cfg, substream(7, 9))

    def test_round_trip(self, tmp_path):
        out = self.output()
        save_stage2_output(out, str(tmp_path / "s2"))
        back = load_stage2_output(str(tmp_path / "s2"))
        assert np.array_equal(out.mu_draws, back.mu_draws)
        assert np.array_equal(out.sigma_inv_draws, back.sigma_inv_draws)
        assert np.array_equal(out.beta_draws, back.beta_draws)
        assert np.array_equal(out.acceptance_rates, back.acceptance_rates)

    def test_round_trip_without_betas(self, tmp_path):
        out = self.output()
        out = Stage2Output(
            mu_draws=out.mu_draws,
            sigma_inv_draws=out.sigma_inv_draws,
            beta_draws=None,
            acceptance_rates=out.acceptance_rates,
        )
        save_stage2_output(out, str(tmp_path / "s2"))
        assert load_stage2_output(str(tmp_path / "s2")).beta_draws is None

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_stage2_output(str(tmp_path / "nope"))

    def test_truncated_payload(self, tmp_path):
        out = self.output()
        save_stage2_output(out, str(tmp_path / "s2"))
        p = tmp_path / "s2" / "mu.bin"
        p.write_bytes(p.read_bytes()[:-16])
        with pytest.raises(ValueError, match="payload"):
            load_stage2_output(str(tmp_path / "s2"))
