import math

import mpmath as mp
import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gevrisk.errors import DegenerateSampleError, InsufficientDataError, ParameterDomainError
from gevrisk.gev import GevParams, gev_cdf, gev_quantile
from gevrisk.var import RebalancePlan, backtest, fit_gp, gev_var, gp_var, normal_var, portfolio_weights

# mpmath evaluation of the GEV quantile, cross-checked by bisection on the CDF below
GEV_Q99 = 5.773413


def _bisect_q(p, q):
    lo, hi = p.mu - 10 * p.sigma, p.mu + 100 * p.sigma
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if gev_cdf(p, mid) < q else (lo, mid)
    return 0.5 * (lo + hi)


class TestVar:
    def test_gev_example(self):
        p = GevParams(0.2, 2.0, 0.5)
        mp.mp.dps = 40
        ref = 2 + mp.mpf(0.5) / mp.mpf(0.2) * mp.expm1(-mp.mpf(0.2) * mp.log(-mp.log(mp.mpf("0.99"))))
        assert float(ref) == pytest.approx(GEV_Q99, abs=1e-6)
        assert gev_var(p) == pytest.approx(GEV_Q99, abs=1e-4)
        assert gev_var(p) == pytest.approx(_bisect_q(p, 0.99), abs=1e-9)

    def test_gumbel_example(self):
        mp.mp.dps = 40
        ref = float(-mp.log(-mp.log(mp.mpf("0.99"))))
        assert gev_var(GevParams(0.0, 0.0, 1.0)) == pytest.approx(ref, abs=1e-10)
        assert ref == pytest.approx(4.6001, abs=1e-4)

    @given(st.floats(-0.5, 0.5), st.floats(0.5, 0.98), st.floats(0.001, 0.01))
    def test_monotone_in_q(self, xi, q, dq):
        p = GevParams(xi, 3.0, 0.5)
        assert gev_var(p, q + dq) > gev_var(p, q)
        assert gev_var(p, q) == gev_quantile(p, q)

    def test_normal(self):
        x = np.random.default_rng(0).normal(size=100_000)
        assert normal_var(x) == pytest.approx(2.3263, abs=0.05)

    def test_normal_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            normal_var(np.full(50, 3.0))
        with pytest.raises(InsufficientDataError):
            normal_var(np.arange(10.0))

    @given(st.floats(-100, 100))
    def test_normal_shift(self, a):
        x = np.random.default_rng(1).normal(size=200)
        assert normal_var(x + a) == pytest.approx(normal_var(x) + a, abs=1e-9)

    def test_gp_exponential(self):
        x = np.random.default_rng(2).exponential(size=100_000)
        assert gp_var(x) == pytest.approx(-math.log(0.01), abs=0.1)
        assert abs(fit_gp(x).xi) < 0.05

    def test_gp_uniform(self):
        x = np.random.default_rng(3).uniform(size=100_000)
        assert fit_gp(x).xi < 0
        assert gp_var(x) < 1

    def test_gp_too_few(self):
        with pytest.raises(InsufficientDataError):
            gp_var(np.random.default_rng(4).exponential(size=300))

    def test_gp_fixed_count(self):
        x = np.random.default_rng(5).exponential(size=2000)
        p = fit_gp(x, n_exceedances=123)
        assert p.zeta_u == pytest.approx(123 / 2000)


class TestWeights:
    def test_example(self):
        w = portfolio_weights({"a": 5.0, "b": 6.0})
        mp.mp.dps = 30
        ref = float(1 / (1 + mp.e ** -1))
        assert w["a"] == pytest.approx(ref, abs=1e-12)
        assert w["a"] == pytest.approx(0.7311, abs=1e-4) and w["b"] == pytest.approx(0.2689, abs=1e-4)

    def test_equal(self):
        w = portfolio_weights({s: 4.0 for s in "abcd"})
        assert all(v == pytest.approx(0.25) for v in w.values())

    def test_underflow(self):
        w = portfolio_weights({"a": 1000.0, "b": 1001.0})
        assert w["a"] == pytest.approx(1 / (1 + math.exp(-1)))

    def test_empty(self):
        with pytest.raises(ParameterDomainError):
            portfolio_weights({})

    @given(st.dictionaries(st.text(min_size=1, max_size=3), st.floats(0, 50), min_size=1, max_size=10),
           st.floats(-100, 100))
    def test_properties(self, vars_, c):
        w = portfolio_weights(vars_)
        assert sum(w.values()) == pytest.approx(1.0, abs=1e-9)
        assert all(v >= 0 for v in w.values())
        shifted = portfolio_weights({k: v + c for k, v in vars_.items()})
        for k in w:
            assert shifted[k] == pytest.approx(w[k], abs=1e-9)
        k0 = next(iter(vars_))
        bumped = portfolio_weights({**vars_, k0: vars_[k0] + 1.0})
        assert bumped[k0] <= w[k0]
        # strict decrease is visible unless the weight has saturated at 0 or 1 in double precision
        if len(vars_) > 1 and 1e-300 < w[k0] < 1 - 1e-12:
            assert bumped[k0] < w[k0]


def price_frame(cols: dict, n=None):
    idx = pd.bdate_range("2020-01-01", periods=n or len(next(iter(cols.values()))))
    return pd.DataFrame(cols, index=idx)


class TestBacktest:
    def test_single_symbol(self):
        p = 10 * np.exp(np.cumsum(np.random.default_rng(6).normal(0, 0.01, 100)))
        states = backtest(price_frame({"A": p}), None, RebalancePlan("equal"))
        vals = np.array([s.value for s in states])
        assert np.allclose(vals, p / p[0], rtol=1e-12)

    def test_single_symbol_gev(self):
        p = 10 * np.exp(np.cumsum(np.random.default_rng(7).normal(0, 0.01, 60)))
        df = price_frame({"A": p})
        var = {"A": pd.Series(4.0, index=df.index)}
        vals = np.array([s.value for s in backtest(df, var, RebalancePlan("gev"))])
        assert np.allclose(vals, p / p[0], rtol=1e-12)

    def test_cancellation(self):
        r = np.random.default_rng(8).uniform(-0.02, 0.02, 10)
        a, b = [1.0], [1.0]
        for x in r:
            a.append(a[-1] * (1 + x))
            b.append(b[-1] * (1 - x))
        # one-day periods: each period holds equal weights and returns r and -r cancel
        states = backtest(price_frame({"A": a, "B": b}), None, RebalancePlan("equal", period_days=1))
        assert np.allclose([s.value for s in states], 1.0, atol=1e-12)
        assert all(sum(s.weights.values()) == pytest.approx(1) for s in states[1:])

    def test_all_cash(self):
        p = np.linspace(10, 20, 50)
        states = backtest(price_frame({"A": p}), None, RebalancePlan("equal", exposure=0.0))
        assert all(s.value == 1.0 for s in states)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        df = price_frame({s: 10 * np.exp(np.cumsum(rng.normal(0, 0.01, 80))) for s in "ABC"})
        var = {s: pd.Series(rng.uniform(3, 5, 80), index=df.index) for s in "ABC"}
        runs = [[s.value for s in backtest(df, var, RebalancePlan("gev"))] for _ in range(2)]
        assert runs[0] == runs[1]

    def test_weights_from_anchor_var(self):
        df = price_frame({"A": np.linspace(10, 11, 30), "B": np.linspace(10, 12, 30)})
        va = pd.Series(5.0, index=df.index)
        vb = pd.Series(6.0, index=df.index)
        vb.iloc[1:] = 100.0   # known only after the first anchor
        states = backtest(df, {"A": va, "B": vb}, RebalancePlan("gev", period_days=22))
        assert states[1].weights["A"] == pytest.approx(0.7311, abs=1e-4)
        assert states[23].weights["B"] < 1e-40

    def test_missing_price_redistributes(self):
        a = np.linspace(10, 11, 30)
        b = np.linspace(10, 12, 30)
        b[5] = np.nan
        states = backtest(price_frame({"A": a, "B": b}), None, RebalancePlan("equal", period_days=22))
        assert states[1].weights == {"A": 1.0}
        assert set(states[23].weights) == {"A", "B"}

    def test_position_reduction(self):
        p = np.linspace(10, 20, 67)
        states = backtest(price_frame({"A": p}), None, RebalancePlan("equal", position_reduction=True))
        fr = [s.position_fraction for s in states[1:]]
        assert fr[0] == 1.0 and fr[22] == 0.5 and fr[44] == pytest.approx(1 / 3)
        # second period: half invested, half in cash
        v22 = states[22].value
        assert states[44].value == pytest.approx(v22 * (0.5 * p[44] / p[22] + 0.5))

    def test_bad_plan(self):
        with pytest.raises(ParameterDomainError):
            RebalancePlan("fancy")
