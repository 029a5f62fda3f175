import csv

import numpy as np
import pytest

from hiermove.diagnostics import (
    ChainSummary,
    compare_runs,
    effective_sample_size,
    stage2_parameter_table,
    summarize,
    write_interval_csv,
    write_summary_csv,
)
from hiermove.stage2 import Stage2Output


class TestEss:
    def test_iid_chain_near_full_size(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(20_000)
        ess = effective_sample_size(x)
        assert 0.9 * 20_000 <= ess <= 20_000

    def test_ar1_matches_analytic_factor(self):
        # AR(1) with coefficient phi has ESS/N -> (1-phi)/(1+phi)
        phi = 0.8
        rng = np.random.default_rng(1)
        n = 200_000
        eps = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = eps[0]
        for i in range(1, n):
            x[i] = phi * x[i - 1] + eps[i]
        expected = n * (1 - phi) / (1 + phi)
        assert effective_sample_size(x) == pytest.approx(expected, rel=0.1)

    def test_constant_chain_zero(self):
        assert effective_sample_size(np.full(100, 3.0)) == 0.0

    def test_capped_at_n(self):
        # strongly antithetic chain: ESS estimate clips to N
        x = np.tile([1.0, -1.0], 500) + 1e-6 * np.random.default_rng(2).standard_normal(
            1000
        )
        assert effective_sample_size(x) <= 1000

    def test_short_chain_rejected(self):
        with pytest.raises(ValueError, match="short"):
            effective_sample_size(np.arange(5.0))

    def test_matches_direct_sum_oracle(self):
        # independent oracle: direct O(n^2) autocovariance and the same
        # paired-sum truncation rule
        rng = np.random.default_rng(3)
        n = 400
        x = np.cumsum(rng.standard_normal(n)) * 0.1 + rng.standard_normal(n)
        xc = x - x.mean()
        acov = np.array([np.dot(xc[: n - t], xc[t:]) / n for t in range(n)])
        rho = acov / acov[0]
        tau, t = 1.0, 1
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair <= 0:
                break
            tau += 2 * pair
            t += 2
        expected = min(n, max(0.0, n / tau))
        assert effective_sample_size(x) == pytest.approx(expected, rel=1e-8)


class TestSummarize:
    def test_quantiles_match_numpy(self):
        rng = np.random.default_rng(4)
        draws = rng.standard_normal((5000, 2))
        s = summarize(draws, names=["a", "b"])
        assert s[0].name == "a"
        assert s[1].quantiles == tuple(
            float(q) for q in np.percentile(draws[:, 1], [2.5, 25, 50, 75, 97.5])
        )
        assert s[0].mean == pytest.approx(draws[:, 0].mean())
        assert s[0].sd == pytest.approx(draws[:, 0].std(ddof=1))

    def test_default_names(self):
        s = summarize(np.random.default_rng(5).standard_normal((100, 3)))
        assert [x.name for x in s] == ["param0", "param1", "param2"]

    def test_name_count_checked(self):
        with pytest.raises(ValueError, match="name"):
            summarize(np.zeros((10, 2)), names=["only-one"])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            summarize(np.empty((0, 2)))


def fake_output(mu, seed=0, j=2):
    rng = np.random.default_rng(seed)
    k = 500
    mu_draws = np.asarray(mu) + 0.1 * rng.standard_normal((k, len(mu)))
    return Stage2Output(
        mu_draws=mu_draws,
        sigma_inv_draws=np.tile(np.eye(len(mu)), (k, 1, 1)),
        beta_draws=rng.standard_normal((k, j, len(mu))),
        acceptance_rates=np.full(j, 0.3),
    )


class TestCompareRuns:
    def test_identical_runs_zero(self):
        a = fake_output([1.0, -1.0], seed=6)
        assert np.allclose(compare_runs(a, a), 0.0)

    def test_known_offset(self):
        a = fake_output([0.0, 0.0], seed=7)
        b = fake_output([0.1, 0.0], seed=8)
        smd = compare_runs(a, b)
        # 0.1 separation over sd 0.1 is roughly one pooled sd
        assert 0.6 < smd[0] < 1.4
        assert smd[1] < 0.3

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            compare_runs(fake_output([0.0]), fake_output([0.0, 0.0]))


class TestParameterTable:
    def test_names_and_layout(self):
        out = fake_output([0.5, -0.5], seed=9, j=3)
        draws, names = stage2_parameter_table(out)
        assert draws.shape == (500, 2 + 3 * 2)
        assert names[:2] == ["mu_beta0", "mu_beta1"]
        assert names[2] == "beta_0_0"
        assert names[-1] == "beta_2_1"
        assert np.array_equal(draws[:, :2], out.mu_draws)
        assert np.array_equal(draws[:, 2:4], out.beta_draws[:, 0])

    def test_without_betas(self):
        out = fake_output([0.5], seed=10)
        out = Stage2Output(
            mu_draws=out.mu_draws,
            sigma_inv_draws=out.sigma_inv_draws,
            beta_draws=None,
            acceptance_rates=out.acceptance_rates,
        )
        draws, names = stage2_parameter_table(out)
        assert names == ["mu_beta0"]
        assert draws.shape == (500, 1)


class TestCsvOutputs:
    def summaries(self):
        rng = np.random.default_rng(11)
        return summarize(rng.standard_normal((1000, 2)), names=["alpha", "beta"])

    def test_summary_csv_round_trip(self, tmp_path):
        s = self.summaries()
        path = str(tmp_path / "s.csv")
        write_summary_csv(s, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["parameter"] for r in rows] == ["alpha", "beta"]
        assert float(rows[0]["mean"]) == s[0].mean
        assert float(rows[1]["q97.5"]) == s[1].quantiles[4]
        assert float(rows[0]["ess"]) == s[0].ess

    def test_interval_csv_columns(self, tmp_path):
        s = self.summaries()
        path = str(tmp_path / "i.csv")
        write_interval_csv(s, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert set(rows[0]) == {"parameter", "mean", "lo50", "hi50", "lo95", "hi95"}
        assert float(rows[0]["lo50"]) == s[0].quantiles[1]
        assert float(rows[0]["hi95"]) == s[0].quantiles[4]
        assert float(rows[0]["lo95"]) < float(rows[0]["lo50"])
