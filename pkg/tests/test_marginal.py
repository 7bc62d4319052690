import math

import numpy as np
import pytest

from cpbart.marginal import (
    DegenerateSampleError,
    MarginalModel,
    fit_kde,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)


def single_kernel(center=0.0, bandwidth=1.0):
    return MarginalModel(
        centers=np.array([center]),
        bandwidth=bandwidth,
        support_lo=center - 10.0 * bandwidth,
        support_hi=center + 10.0 * bandwidth,
    )


class TestFitKde:
    def test_symmetric_sample_median(self):
        model = fit_kde([0.0, 0.0, 1.0, 1.0])
        assert model.bandwidth > 0
        assert model.cdf(0.5) == pytest.approx(0.5, abs=1e-12)

    def test_bandwidth_is_silverman(self):
        y = np.array([0.0, 0.0, 1.0, 1.0])
        sd = y.std(ddof=1)
        iqr = np.percentile(y, 75) - np.percentile(y, 25)
        expected = 0.9 * min(sd, iqr / 1.34) * 4 ** (-0.2)
        assert fit_kde(y).bandwidth == pytest.approx(expected, rel=1e-12)

    def test_monte_carlo_cdf_at_zero(self):
        y = np.random.default_rng(7).standard_normal(10_000)
        assert 0.48 < fit_kde(y).cdf(0.0) < 0.52

    @pytest.mark.parametrize("y", [[1.0], [1.0, 1.0, 1.0]])
    def test_degenerate_sample(self, y):
        with pytest.raises(DegenerateSampleError, match="degenerate marginal sample"):
            fit_kde(y)

    def test_support_bounds(self):
        y = np.array([-1.0, 0.0, 2.0])
        model = fit_kde(y)
        assert model.support_lo == pytest.approx(-1.0 - 10 * model.bandwidth)
        assert model.support_hi == pytest.approx(2.0 + 10 * model.bandwidth)


class TestCdf:
    def test_single_kernel_center(self):
        assert single_kernel(1.5).cdf(1.5) == pytest.approx(0.5, abs=1e-14)

    def test_tail_bound_at_support(self):
        model = fit_kde(np.random.default_rng(1).standard_normal(50))
        assert model.cdf(model.support_lo) <= 1e-9
        assert model.cdf(model.support_hi) >= 1 - 1e-9

    def test_matches_normal_cdf_in_bulk(self):
        y = np.random.default_rng(3).standard_normal(20_000)
        model = fit_kde(y)
        for q in (-1.0, -0.3, 0.0, 0.6, 1.4):
            assert model.cdf(q) == pytest.approx(std_normal_cdf(q), abs=0.02)

    def test_clipped_to_open_interval(self):
        model = single_kernel()
        assert model.cdf(-1e6) >= 1e-12
        assert model.cdf(1e6) <= 1 - 1e-12


class TestPdf:
    def test_standard_normal_mode(self):
        assert single_kernel().pdf(0.0) == pytest.approx(
            1.0 / math.sqrt(2 * math.pi), rel=1e-12
        )

    def test_symmetry(self):
        model = fit_kde([-1.0, 1.0])
        for y in (0.3, 0.9, 2.4):
            assert model.pdf(-y) == pytest.approx(model.pdf(y), rel=1e-12)

    def test_finite_difference_of_cdf(self):
        model = fit_kde(np.random.default_rng(5).standard_normal(200))
        delta = 1e-5
        for y in (-1.2, 0.1, 0.8):
            approx = (model.cdf(y + delta) - model.cdf(y - delta)) / (2 * delta)
            assert approx == pytest.approx(model.pdf(y), rel=1e-4)


class TestQuantile:
    def test_round_trip_from_value(self):
        model = fit_kde(np.random.default_rng(11).standard_normal(100))
        for y0 in (-0.7, 0.0, 1.3):
            assert model.quantile(model.cdf(y0)) == pytest.approx(y0, abs=1e-8)

    def test_symmetric_two_point_median(self):
        model = fit_kde([-2.0, 2.0])
        assert model.quantile(0.5) == pytest.approx(0.0, abs=1e-9)

    def test_monte_carlo_upper_tail(self):
        y = np.random.default_rng(13).standard_normal(20_000)
        assert fit_kde(y).quantile(0.975) == pytest.approx(1.96, abs=0.05)

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.2, 1.3])
    def test_out_of_range(self, u):
        model = single_kernel()
        with pytest.raises(ValueError, match="quantile level out of range"):
            model.quantile(u)

    def test_vectorized(self):
        model = fit_kde(np.random.default_rng(2).standard_normal(60))
        u = np.array([0.1, 0.5, 0.9])
        out = model.quantile(u)
        assert out.shape == (3,)
        assert np.all(np.diff(out) > 0)


class TestStdNormal:
    def test_cdf_at_zero(self):
        assert std_normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_quantile_975(self):
        assert std_normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)

    def test_pdf_at_zero(self):
        assert std_normal_pdf(0.0) == pytest.approx(0.3989423, abs=1e-7)

    def test_quantile_round_trip(self):
        z = np.linspace(-5, 5, 41)
        assert np.max(np.abs(std_normal_quantile(std_normal_cdf(z)) - z)) < 1e-9

    def test_quantile_domain(self):
        with pytest.raises(ValueError, match="quantile level out of range"):
            std_normal_quantile(1.0)


class TestInvariants:
    def test_cdf_quantile_round_trip_grid(self):
        model = fit_kde(np.random.default_rng(17).standard_normal(300))
        u = np.linspace(0.001, 0.999, 200)
        assert np.max(np.abs(model.cdf(model.quantile(u)) - u)) < 1e-9

    def test_cdf_strictly_increasing(self):
        # strict monotonicity holds wherever the output clip is inactive
        model = fit_kde(np.random.default_rng(19).standard_normal(80))
        lo = model.centers.min() - 5 * model.bandwidth
        hi = model.centers.max() + 5 * model.bandwidth
        grid = np.linspace(lo, hi, 500)
        assert np.all(np.diff(model.cdf(grid)) > 0)

    def test_density_integrates_to_one(self):
        model = fit_kde(np.random.default_rng(23).gamma(3.0, 2.0, size=150))
        grid = np.linspace(model.support_lo, model.support_hi, 20_001)
        assert np.trapezoid(model.pdf(grid), grid) == pytest.approx(1.0, abs=1e-3)

    def test_dvoretzky_style_bound(self):
        n = 2000
        y = np.random.default_rng(29).standard_normal(n)
        model = fit_kde(y)
        ys = np.sort(y)
        ecdf_hi = np.arange(1, n + 1) / n
        ecdf_lo = np.arange(0, n) / n
        kde = model.cdf(ys)
        sup = np.maximum(np.abs(kde - ecdf_hi), np.abs(kde - ecdf_lo)).max()
        assert sup < 2.0 / math.sqrt(n)
