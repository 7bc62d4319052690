import math

import numpy as np
import pytest
from scipy import stats

from cpbart.hmc import HMCConfig
from cpbart.metrics import (
    crps_from_quantiles,
    cross_validate,
    default_crps_levels,
    mean_log_score,
    pinball,
    qrmse,
    quantile_coverage,
    rmse,
)
from cpbart.tree_mcmc import SamplerConfig
from cpbart.trees import Dataset


class TestRmse:
    def test_identical(self):
        assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_unit_shift(self):
        assert rmse(np.arange(5.0) + 1.0, np.arange(5.0)) == pytest.approx(1.0)

    def test_loop_oracle(self, rng):
        a = rng.standard_normal(40)
        b = rng.standard_normal(40)
        direct = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)) / 40)
        assert rmse(a, b) == pytest.approx(direct, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            rmse([1.0], [1.0, 2.0])


class TestMeanLogScore:
    def test_unit_densities(self):
        assert mean_log_score(np.ones(7)) == 0.0

    def test_exp_minus_one(self):
        assert mean_log_score(np.full(4, math.exp(-1.0))) == pytest.approx(1.0)

    def test_loop_oracle(self, rng):
        d = rng.uniform(0.01, 3.0, size=30)
        direct = -sum(math.log(v) for v in d) / 30
        assert mean_log_score(d) == pytest.approx(direct, rel=1e-12)

    def test_floors_zeros_with_warning(self):
        with pytest.warns(UserWarning, match="floored 1"):
            out = mean_log_score([1.0, 0.0])
        assert np.isfinite(out)


class TestQrmse:
    def test_identical(self):
        assert qrmse([1.0, 2.0], [1.0, 2.0], 0.5) == 0.0

    def test_shift(self):
        assert qrmse([3.0, 3.0], [1.0, 1.0], 0.25) == pytest.approx(2.0)

    def test_loop_oracle(self, rng):
        a, b = rng.standard_normal(25), rng.standard_normal(25)
        direct = math.sqrt(np.mean((a - b) ** 2))
        assert qrmse(a, b, 0.75) == pytest.approx(direct, rel=1e-12)


class TestPinball:
    def test_zero_at_match(self):
        assert pinball([2.0], [2.0], 0.5) == 0.0

    def test_under_prediction(self):
        assert pinball([1.0], [0.0], 0.5) == pytest.approx(0.5)

    def test_over_prediction(self):
        assert pinball([0.0], [1.0], 0.9) == pytest.approx(0.1)

    def test_nonnegative(self, rng):
        y = rng.standard_normal(100)
        q = rng.standard_normal(100)
        for alpha in (0.1, 0.5, 0.9):
            per_obs = ((y < q).astype(float) - alpha) * (q - y)
            assert np.all(per_obs >= 0.0)
            assert pinball(y, q, alpha) >= 0.0

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            pinball([0.0], [0.0], 1.5)


class TestCrps:
    def test_degenerate_forecast(self):
        assert crps_from_quantiles(
            np.array([1.7, 1.7]), lambda a: np.array([1.7, 1.7])
        ) == pytest.approx(0.0, abs=1e-12)

    def test_standard_normal_closed_form(self):
        got = crps_from_quantiles(
            np.array([0.0]), lambda a: np.array([stats.norm.ppf(a)])
        )
        expected = (math.sqrt(2.0) - 1.0) / math.sqrt(math.pi)
        assert got == pytest.approx(expected, abs=1e-2)

    @pytest.mark.statistical
    @pytest.mark.parametrize(
        "dist,y",
        [(stats.norm(0.3, 1.2), 0.8), (stats.gamma(3.0, scale=2.0), 4.2)],
    )
    def test_energy_form_monte_carlo(self, dist, y, rng):
        levels = np.arange(1, 400) / 400.0
        got = crps_from_quantiles(
            np.array([y]), lambda a: np.array([dist.ppf(a)]), levels
        )
        n_mc = 1_000_000
        a = dist.rvs(n_mc // 2, random_state=rng)
        b = dist.rvs(n_mc // 2, random_state=rng)
        energy = np.abs(a - y).mean() - 0.5 * np.abs(a - b).mean()
        se = np.abs(a - y).std() / math.sqrt(n_mc // 2)
        assert got == pytest.approx(energy, abs=3 * se + 0.02 * energy)

    def test_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            crps_from_quantiles(np.zeros(2), lambda a: np.zeros(2), [0.5, 0.2])


class TestQuantileCoverage:
    def test_always_inside(self):
        truth = np.array([0.0, 1.0, 2.0])
        assert quantile_coverage((-np.full(3, 1e9), np.full(3, 1e9)), truth) == 1.0

    def test_always_outside(self):
        truth = np.array([0.0, 1.0])
        assert quantile_coverage((np.array([1.0, 2.0]), np.array([2.0, 3.0])), truth) == 0.0

    def test_loop_oracle(self, rng):
        truth = rng.standard_normal(50)
        lo = truth - rng.uniform(0, 1, 50)
        hi = lo + rng.uniform(0, 1.5, 50)
        direct = sum(l <= t <= h for l, t, h in zip(lo, truth, hi)) / 50
        assert quantile_coverage((lo, hi), truth) == pytest.approx(direct)


class TestOrderInvariance:
    def test_metrics_invariant_to_permutation(self, rng):
        y = rng.standard_normal(30)
        q = rng.standard_normal(30)
        perm = rng.permutation(30)
        assert rmse(q, y) == pytest.approx(rmse(q[perm], y[perm]), rel=1e-12)
        assert pinball(y, q, 0.3) == pytest.approx(
            pinball(y[perm], q[perm], 0.3), rel=1e-12
        )
        dens = rng.uniform(0.1, 2.0, 30)
        assert mean_log_score(dens) == pytest.approx(
            mean_log_score(dens[perm]), rel=1e-12
        )


@pytest.fixture(scope="module")
def small_data():
    gen = np.random.default_rng(77)
    raw = gen.normal(3.0, 2.0, size=(60, 2))
    y = np.sin(raw[:, 0]) + 0.3 * gen.standard_normal(60)
    return Dataset.from_raw(raw, y, columns=["a", "b"])


@pytest.fixture(scope="module")
def small_config():
    return SamplerConfig(m=5, iters=60, burnin=20, seed=1, hmc=HMCConfig())


class TestCrossValidate:
    def test_fold_partition(self, small_data):
        from cpbart.metrics import _fold_indices

        folds = _fold_indices(60, 7, np.random.default_rng(5))
        sizes = [f.size for f in folds]
        assert max(sizes) - min(sizes) <= 1
        assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(60))

    def test_deterministic_given_seed(self, small_data, small_config):
        a = cross_validate(small_data, k=4, config=small_config, seed=3)
        b = cross_validate(small_data, k=4, config=small_config, seed=3)
        assert a.rmse == b.rmse and a.log_score == b.log_score and a.crps == b.crps

    def test_pooled_rmse_equals_concatenated(self, small_data, small_config):
        # the report's RMSE must equal a direct computation over the
        # concatenated per-fold predictions, reconstructed independently
        from cpbart.metrics import _fold_indices, _run_fold
        from dataclasses import replace

        seed = 9
        report = cross_validate(small_data, k=3, config=small_config, seed=seed)
        rng = np.random.default_rng(seed)
        folds = _fold_indices(60, 3, rng)
        raw = small_data.X * (small_data.scaling[:, 1] - small_data.scaling[:, 0])
        raw = raw + small_data.scaling[:, 0]
        fold_seeds = np.random.SeedSequence(seed).generate_state(3)
        means = np.empty(60)
        for i, test_idx in enumerate(folds):
            cfg = replace(small_config, seed=int(fold_seeds[i]))
            out = _run_fold(
                (raw, small_data.y, small_data.columns, test_idx, cfg,
                 "cpbart", np.array([0.5]))
            )
            means[test_idx] = out[1]
        assert report.rmse == pytest.approx(
            rmse(means, small_data.y), rel=1e-12
        )

    def test_requires_enough_rows(self, small_data, small_config):
        with pytest.raises(ValueError):
            cross_validate(small_data, k=100, config=small_config)

    def test_baseline_method(self, small_data, small_config):
        report = cross_validate(
            small_data, k=3, method="baseline", config=small_config, seed=2
        )
        assert np.isfinite(report.rmse) and np.isfinite(report.crps)
        assert report.n_test == 60

    def test_report_rows_flat(self, small_data, small_config):
        report = cross_validate(small_data, k=3, config=small_config, seed=4)
        rows = dict(report.as_rows())
        assert "rmse" in rows and "pinball_0.5" in rows
