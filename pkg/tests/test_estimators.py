import math
import warnings

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gevrisk.errors import DegenerateSampleError, NoConvergenceError, ParameterDomainError
from gevrisk.estimators import (
    CENTRAL_TRIPLE, DEFAULT_TRIPLES, MultiQuantileConfig, QuantileTriple, empirical_quantile,
    fit_sigma_mu, invert_ratio, multi_quantile_fit, spacing_ratio, spacing_ratio_derivative,
    three_quantile_xi, xi_asymptotic_variance, xi_covariance,
)
from gevrisk.gev import GevParams, gev_quantile, gev_sample


def mp_ratio(xi, levels):
    mp.mp.dps = 40
    L = [mp.log(-mp.log(mp.mpf(q))) for q in levels]
    if xi == 0:
        return (L[1] - L[2]) / (L[0] - L[1])
    e = [mp.exp(-mp.mpf(xi) * l) for l in L]
    return (e[2] - e[1]) / (e[1] - e[0])


def mp_bisect_xi(ratio, levels):
    lo, hi = mp.mpf(-10), mp.mpf(10)
    for _ in range(200):
        mid = (lo + hi) / 2
        if mp_ratio(mid, levels) < ratio:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def exact_sample(p, n=999):
    """Midpoint plotting-position sample; its empirical quantiles converge to the GEV quantiles."""
    return np.asarray(gev_quantile(p, (np.arange(n) + 0.5) / n))


class TestTriple:
    def test_ordering(self):
        with pytest.raises(ParameterDomainError):
            QuantileTriple(0.5, 0.25, 0.75)
        with pytest.raises(ParameterDomainError):
            QuantileTriple(0.0, 0.5, 0.75)

    def test_config(self):
        with pytest.raises(ParameterDomainError):
            MultiQuantileConfig(())
        with pytest.raises(ParameterDomainError):
            MultiQuantileConfig((CENTRAL_TRIPLE, CENTRAL_TRIPLE))
        assert MultiQuantileConfig(((0.1, 0.5, 0.9),)).refit == QuantileTriple(0.1, 0.5, 0.9)
        assert MultiQuantileConfig().refit == CENTRAL_TRIPLE


class TestEmpiricalQuantile:
    def test_small(self):
        assert empirical_quantile([1, 2, 3, 4, 5], 0.5) == 3
        assert empirical_quantile([1, 2, 3, 4], 0.5) == 2.5
        assert empirical_quantile([3, 1, 2], 0.0) == 1
        assert empirical_quantile([3, 1, 2], 1.0) == 3

    def test_type7_definition(self):
        x = np.array([4.0, 1.0, 7.0, 2.0, 9.0, 3.0])
        s = np.sort(x)
        for q in (0.1, 0.33, 0.8):
            h = (x.size - 1) * q
            lo = int(math.floor(h))
            ref = s[lo] + (h - lo) * (s[min(lo + 1, x.size - 1)] - s[lo])
            assert empirical_quantile(x, q) == pytest.approx(ref, abs=1e-14)

    def test_empty(self):
        with pytest.raises(ParameterDomainError):
            empirical_quantile([], 0.5)

    def test_large_gev(self):
        p = GevParams(0.2, 0, 1)
        x = gev_sample(p, 10**6, 3)
        assert empirical_quantile(x, 0.9) == pytest.approx(gev_quantile(p, 0.9), rel=0.01)


class TestRatio:
    def test_zero_value(self):
        t = CENTRAL_TRIPLE
        ref = float(mp_ratio(0, t.levels))
        assert ref == pytest.approx(1.26869, abs=1e-5)
        assert spacing_ratio(0.0, t.ll) == pytest.approx(ref, rel=1e-14)
        assert invert_ratio(ref, t.ll) == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("xi", [-3.0, -0.7, -1e-3, 1e-3, 0.5, 2.0])
    def test_against_mpmath(self, xi):
        for t in DEFAULT_TRIPLES:
            assert spacing_ratio(xi, t.ll) == pytest.approx(float(mp_ratio(xi, t.levels)), rel=1e-12)

    @given(st.floats(0.05, 20.0))
    def test_inverse_matches_bisection(self, r):
        t = QuantileTriple(0.1, 0.5, 0.9)
        try:
            got = invert_ratio(r, t.ll)
        except NoConvergenceError:
            assert mp_ratio(-10, t.levels) > r or mp_ratio(10, t.levels) < r
            return
        assert got == pytest.approx(mp_bisect_xi(r, t.levels), abs=1e-9)

    def test_monotone(self):
        xs = np.linspace(-5, 5, 401)
        r = [spacing_ratio(x, CENTRAL_TRIPLE.ll) for x in xs]
        assert np.all(np.diff(r) > 0)

    @pytest.mark.parametrize("xi", [-2.0, -0.3, 0.0, 1e-6, 0.4, 1.5])
    def test_derivative_finite_difference(self, xi):
        ll = QuantileTriple(0.15, 0.5, 0.85).ll
        h = 1e-6
        fd = (spacing_ratio(xi + h, ll) - spacing_ratio(xi - h, ll)) / (2 * h)
        assert spacing_ratio_derivative(xi, ll) == pytest.approx(fd, rel=1e-6)

    def test_bad_ratio(self):
        with pytest.raises(DegenerateSampleError):
            invert_ratio(0.0, CENTRAL_TRIPLE.ll)
        with pytest.raises(NoConvergenceError):
            invert_ratio(1e9, CENTRAL_TRIPLE.ll)


class TestThreeQuantile:
    def test_exact_quantiles(self):
        p = GevParams(0.5, 0, 1)
        qs = np.asarray(gev_quantile(p, CENTRAL_TRIPLE.levels))
        from gevrisk.estimators import _sigma_mu_from_quantiles, _xi_from_quantiles

        xi = _xi_from_quantiles(qs, CENTRAL_TRIPLE)
        assert xi == pytest.approx(0.5, abs=1e-9)
        sigma, mu = _sigma_mu_from_quantiles(qs, xi, CENTRAL_TRIPLE)
        assert (sigma, mu) == pytest.approx((1.0, 0.0), abs=1e-9)

    @pytest.mark.parametrize("p", [GevParams(0.0, 3.0, 2.0), GevParams(0.4, -1.0, 0.5)])
    def test_noiseless_sigma_mu(self, p):
        from gevrisk.estimators import _sigma_mu_from_quantiles

        qs = np.asarray(gev_quantile(p, CENTRAL_TRIPLE.levels))
        sigma, mu = _sigma_mu_from_quantiles(qs, p.xi, CENTRAL_TRIPLE)
        assert sigma == pytest.approx(p.sigma, abs=1e-9)
        assert mu == pytest.approx(p.mu, abs=1e-9)

    def test_monte_carlo_negative_xi(self):
        t = QuantileTriple(0.1, 0.5, 0.9)
        rng = np.random.default_rng(11)
        est = [three_quantile_xi(gev_sample(GevParams(-0.3, 0, 1), 10**5, rng), t) for _ in range(100)]
        assert np.mean(est) == pytest.approx(-0.3, abs=0.05)

    def test_monte_carlo_sigma_mu(self):
        rng = np.random.default_rng(12)
        p = GevParams(0.2, 2.0, 0.5)
        out = []
        for _ in range(50):
            x = gev_sample(p, 10**5, rng)
            out.append(fit_sigma_mu(x, three_quantile_xi(x, CENTRAL_TRIPLE)))
        sigma, mu = np.mean(out, axis=0)
        assert sigma == pytest.approx(0.5, rel=0.05)
        assert mu == pytest.approx(2.0, abs=0.05)

    def test_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            three_quantile_xi(np.ones(100), CENTRAL_TRIPLE)
        with pytest.raises(ParameterDomainError):
            three_quantile_xi(np.arange(10.0), CENTRAL_TRIPLE)


class TestMultiQuantile:
    def test_single_triple_equals_three_quantile(self):
        x = gev_sample(GevParams(0.1, 1, 2), 2000, 5)
        cfg = MultiQuantileConfig((CENTRAL_TRIPLE,))
        fit = multi_quantile_fit(x, cfg)
        xi = three_quantile_xi(x, CENTRAL_TRIPLE)
        assert fit.params.xi == xi
        assert (fit.params.sigma, fit.params.mu) == pytest.approx(fit_sigma_mu(x, xi))
        assert fit.weights.tolist() == [1.0]

    def test_noiseless_all_equal(self):
        # exact GEV quantiles at every level: each triple returns the true xi
        p = GevParams(-0.4, 2, 0.7)
        x = exact_sample(p, 200001)
        fit = multi_quantile_fit(x)
        assert np.ptp(fit.xi_components) < 1e-4
        assert fit.params.xi == pytest.approx(float(np.mean(fit.xi_components)), abs=1e-4)

    @given(st.floats(-1, 1), st.floats(-5, 5), st.floats(0.1, 10), st.integers(0, 10**6))
    def test_location_scale_equivariance(self, xi, a, b, seed):
        x = gev_sample(GevParams(xi, 0, 1), 300, seed)
        f0 = multi_quantile_fit(x)
        f1 = multi_quantile_fit(a + b * x)
        assert f1.params.xi == pytest.approx(f0.params.xi, abs=1e-9)
        assert f1.params.mu == pytest.approx(a + b * f0.params.mu, abs=1e-8 * (1 + abs(a) + b))
        assert f1.params.sigma == pytest.approx(b * f0.params.sigma, rel=1e-9)

    @given(st.floats(-1.5, 1.5), st.integers(0, 10**6), st.sampled_from(["optimized", "uniform"]))
    def test_weights_sum_to_one(self, xi, seed, mode):
        fit = multi_quantile_fit(gev_sample(GevParams(xi, 0, 1), 200, seed), MultiQuantileConfig(weight_mode=mode))
        assert abs(fit.weights.sum() - 1.0) <= 1e-12
        assert fit.xi_variance >= 0

    def test_uniform_fallback(self, monkeypatch):
        import gevrisk.estimators as est

        monkeypatch.setattr(est, "MAX_CONDITION", 1.0)
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            fit = multi_quantile_fit(gev_sample(GevParams(0, 0, 1), 500, 1))
        assert fit.fallback_uniform
        assert np.allclose(fit.weights, 0.2)
        assert any("uniform" in str(m.message) for m in w)

    def test_failing_triple_dropped(self):
        # ties covering the 0.5..0.8 quantiles make Q3 == Q2 for the three inner triples
        rng = np.random.default_rng(4)
        x = np.concatenate([rng.uniform(0, 4, 450), np.full(351, 5.0), rng.uniform(6, 9, 200)])
        fit = multi_quantile_fit(x)
        assert fit.triples == (QuantileTriple(0.10, 0.50, 0.90), QuantileTriple(0.15, 0.50, 0.85))
        assert fit.weights.shape == (2,)

    def test_all_triples_failing(self):
        with pytest.raises(DegenerateSampleError):
            multi_quantile_fit(np.concatenate([np.arange(10.0), np.full(90, 10.0)]))

    def test_variance_not_above_single_triples(self):
        rng = np.random.default_rng(21)
        p = GevParams(0.2, 0, 1)
        comb, single = [], []
        for _ in range(200):
            x = gev_sample(p, 10_000, rng)
            f = multi_quantile_fit(x)
            comb.append(f.params.xi)
            single.append(f.xi_components)
        single = np.array(single)
        assert np.var(comb) <= single.var(axis=0).min()


class TestAsymptoticVariance:
    @pytest.mark.parametrize("xi", np.linspace(-2, 2, 17))
    def test_positive(self, xi):
        assert xi_asymptotic_variance(float(xi)) > 0

    def test_covariance_symmetric_psd(self):
        c = xi_covariance(0.3, DEFAULT_TRIPLES)
        assert np.allclose(c, c.T)
        assert np.linalg.eigvalsh(c).min() > 0

    def test_optimized_not_above_uniform(self):
        for xi in (-0.5, 0.0, 0.5):
            u = xi_asymptotic_variance(xi, MultiQuantileConfig(weight_mode="uniform"))
            assert xi_asymptotic_variance(xi) <= u + 1e-12

    @pytest.mark.parametrize("xi", [0.0, 0.5, -0.5])
    def test_monte_carlo(self, xi):
        n, reps = 10_000, 500
        rng = np.random.default_rng(100 + int(10 * xi))
        p = GevParams(xi, 0, 1)
        z = [math.sqrt(n) * (multi_quantile_fit(gev_sample(p, n, rng)).params.xi - xi) for _ in range(reps)]
        assert np.var(z, ddof=1) == pytest.approx(xi_asymptotic_variance(xi), rel=0.15)
