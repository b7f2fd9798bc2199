"""GEV-, normal- and GP-based VaR, VaR-driven portfolio weights and a rebalancing backtest."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import DegenerateSampleError, InsufficientDataError, ParameterDomainError
from .gev import GevParams, GpParams, gev_quantile, gp_quantile, normal_quantile

log = logging.getLogger(__name__)


def gev_var(fit: GevParams, q: float = 0.99) -> float:
    return float(gev_quantile(fit, q))


def normal_var(sample, q: float = 0.99) -> float:
    """mean + z_q * std of the sample (ddof=1)."""
    x = np.asarray(sample, dtype=float)
    if x.size < 30:
        raise InsufficientDataError(f"normal VaR needs 30 observations, got {x.size}")
    sd = float(x.std(ddof=1))
    if not sd > 0:
        raise DegenerateSampleError("zero-variance sample")
    return float(x.mean()) + normal_quantile(q) * sd


def fit_gp_pwm(excess) -> tuple[float, float]:
    """Probability-weighted-moment GP fit (Hosking & Wallis) to threshold excesses.

    Returns ``(xi, beta)`` in the convention where ``xi > 0`` is heavy-tailed.
    """
    y = np.sort(np.asarray(excess, dtype=float))
    n = y.size
    if n < 2:
        raise InsufficientDataError("GP fit needs at least two excesses")
    pp = (np.arange(1, n + 1) - 0.35) / n
    a0 = float(y.mean())
    a1 = float(np.mean((1.0 - pp) * y))
    denom = a0 - 2.0 * a1
    if not denom > 0 or not a0 > 0:
        raise DegenerateSampleError("degenerate excesses for the PWM GP fit")
    return 2.0 - a0 / denom, 2.0 * a0 * a1 / denom


def fit_gp(
    values, threshold_quantile: float = 0.9, n_exceedances: int | None = None, min_exceedances: int = 50
) -> GpParams:
    """Peaks-over-threshold GP fit.

    The threshold is the empirical ``threshold_quantile``, or, when
    ``n_exceedances`` is given, the value just below the top ``n_exceedances``
    order statistics.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if n_exceedances is not None:
        if not 0 < n_exceedances < n:
            raise ParameterDomainError("n_exceedances must be in (0, n)")
        u = float(x[n - n_exceedances - 1])
    else:
        u = float(np.quantile(x, threshold_quantile))
    exc = x[x > u] - u
    if exc.size < min_exceedances:
        raise InsufficientDataError(f"{exc.size} exceedances above {u:.4g}, need {min_exceedances}")
    xi, beta = fit_gp_pwm(exc)
    return GpParams(xi, beta, u, exc.size / n)


def gp_var(
    slr_window,
    q: float = 0.99,
    threshold_quantile: float = 0.9,
    n_exceedances: int | None = None,
    min_exceedances: int = 50,
) -> float:
    p = fit_gp(slr_window, threshold_quantile, n_exceedances, min_exceedances)
    if q < 1.0 - p.zeta_u:
        raise ParameterDomainError(f"level {q} lies below the GP threshold level {1 - p.zeta_u:.4f}")
    return float(gp_quantile(p, q))


def portfolio_weights(vars: Mapping[str, float]) -> dict[str, float]:
    """Softmin weights exp(-VaR_i) / sum_j exp(-VaR_j), computed with a max shift."""
    if not vars:
        raise ParameterDomainError("at least one symbol is required")
    names = list(vars)
    v = np.array([vars[s] for s in names], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ParameterDomainError("VaR values must be finite")
    e = np.exp(-(v - v.min()))
    w = e / e.sum()
    return dict(zip(names, w.tolist()))


# ---------------------------------------------------------------------------
# backtest


@dataclass(frozen=True)
class RebalancePlan:
    """``strategy`` is one of gev / normal / equal.

    With ``position_reduction`` the invested fraction in period ``p`` (0-based)
    is ``1 / (p + 1)``; the rest is held as zero-return cash. ``exposure``
    scales the invested fraction further (0 means all cash).
    """

    strategy: str = "gev"
    period_days: int = 22
    position_reduction: bool = False
    exposure: float = 1.0
    transaction_cost: float = 0.0

    def __post_init__(self) -> None:
        if self.strategy not in ("gev", "normal", "equal"):
            raise ParameterDomainError(f"unknown strategy {self.strategy!r}")
        if self.period_days < 1:
            raise ParameterDomainError("rebalance period must be >= 1 day")
        if not 0 <= self.exposure <= 1:
            raise ParameterDomainError("exposure must lie in [0, 1]")

    def fraction(self, period: int) -> float:
        f = 1.0 / (period + 1) if self.position_reduction else 1.0
        return f * self.exposure


@dataclass
class PortfolioState:
    t: object
    weights: dict[str, float]
    position_fraction: float
    value: float


def _latest(series: pd.Series | None, t) -> float:
    if series is None or series.empty:
        return math.nan
    s = series.loc[:t]
    s = s[np.isfinite(s.to_numpy(dtype=float))]
    return float(s.iloc[-1]) if len(s) else math.nan


def backtest(
    prices: pd.DataFrame,
    var_series: Mapping[str, pd.Series] | None,
    plan: RebalancePlan,
) -> list[PortfolioState]:
    """Buy-and-hold within periods of ``plan.period_days``; weights set at each period anchor.

    Weights for a period are computed from the latest VaR known at the close of
    the anchor day and held from the next day. Symbols with a missing price
    inside the period, or without a VaR yet, are left out and the remaining
    weights renormalized. A period with no eligible symbol is held in cash.
    """
    prices = prices.sort_index()
    dates = list(prices.index)
    px = prices.to_numpy(dtype=float)
    symbols = list(prices.columns)
    n = len(dates)
    if n == 0:
        raise InsufficientDataError("no price dates")
    value = 1.0
    states = [PortfolioState(dates[0], {}, 0.0, value)]
    anchor = 0
    period = 0
    prev_alloc = np.zeros(len(symbols))
    while anchor < n - 1:
        end = min(anchor + plan.period_days, n - 1)
        block = px[anchor : end + 1]
        ok = np.all(np.isfinite(block), axis=0) & np.all(block > 0, axis=0) if block.size else np.array([])
        eligible = [s for s, good in zip(symbols, ok) if good]
        dropped = [s for s, good in zip(symbols, ok) if not good]
        if dropped:
            log.info("period %d: missing prices for %s, weights redistributed", period, dropped)
        if plan.strategy == "equal":
            w = {s: 1.0 / len(eligible) for s in eligible} if eligible else {}
        else:
            vs = {s: _latest((var_series or {}).get(s), dates[anchor]) for s in eligible}
            vs = {s: v for s, v in vs.items() if math.isfinite(v)}
            w = portfolio_weights(vs) if vs else {}
        f = plan.fraction(period) if w else 0.0
        alloc = np.array([w.get(s, 0.0) * f for s in symbols])
        if plan.transaction_cost:
            value *= 1.0 - plan.transaction_cost * float(np.abs(alloc - prev_alloc).sum())
        start_value = value
        cols = [symbols.index(s) for s in w]
        wv = np.array([w[s] for s in w])
        for i in range(anchor + 1, end + 1):
            growth = float(wv @ (px[i, cols] / px[anchor, cols])) if cols else 0.0
            value = start_value * (f * growth + (1.0 - f))
            states.append(PortfolioState(dates[i], dict(w), f, value))
        if cols:
            drift = px[end, cols] / px[anchor, cols] * wv * f
            prev_alloc = np.zeros(len(symbols))
            prev_alloc[cols] = drift / max(value / start_value, 1e-300)
        else:
            prev_alloc = np.zeros(len(symbols))
        anchor = end
        period += 1
    return states
