"""Per-symbol and pool-level orchestration of the market-data pipeline."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .changepoint import ChangepointReport, JumpReport, bocd, detect_jumps, thin, trajectory_thresholds
from .config import PipelineConfig
from .errors import DataError, GevRiskError, InsufficientDataError
from .maxima import MaximaSeries, RollingWindow, extract_block_maxima, rolling_samples
from .monitor import RiskTrajectory, Stability, cross_section_series, fit_trajectory, stability
from .returns import (
    BarSeries, ExclusionReport, SlrSeries, decorrelation_time, filter_sessions, log_returns,
    read_bars_csv, standardize,
)
from .var import RebalancePlan, backtest, gp_var, normal_var

log = logging.getLogger(__name__)


def discover_symbols(data_dir: str | Path) -> list[Path]:
    d = Path(data_dir)
    if not d.is_dir():
        raise DataError(f"data directory {d} does not exist")
    files = sorted(d.glob("*.csv"))
    if not files:
        raise DataError(f"no symbols: {d} holds no *.csv files")
    return files


def load_pool(files: list[Path], cfg: PipelineConfig) -> list[BarSeries]:
    """Read every file and give all symbols the union calendar so block labels line up."""
    session = cfg.session_spec()
    bars = [read_bars_csv(f, session, f.stem) for f in files]
    cal = tuple(sorted({d for b in bars for d in b.calendar}))
    return [replace(b, calendar=cal) for b in bars]


@dataclass
class SymbolResult:
    symbol: str
    exclusions: ExclusionReport | None = None
    slr: SlrSeries | None = None
    maxima: MaximaSeries | None = None
    trajectory: RiskTrajectory | None = None
    stability: Stability | None = None
    var_rows: list[dict] = field(default_factory=list)
    decorrelation_minutes: float = math.nan
    error: str | None = None
    error_type: str | None = None

    def summary(self) -> dict:
        t = self.trajectory
        out = {
            "symbol": self.symbol,
            "error": self.error,
            "active_fraction": self.exclusions.active_fraction if self.exclusions else None,
            "slr_count": len(self.slr) if self.slr else 0,
            "maxima_count": len(self.maxima) if self.maxima else 0,
            "fits": len(t.records) if t else 0,
            "passing_fits": len(t.passing()) if t else 0,
            "decorrelation_minutes": None if math.isnan(self.decorrelation_minutes) else self.decorrelation_minutes,
        }
        if self.stability:
            s = self.stability
            out.update(mEVI=s.mEVI, sti=s.sti, margin=s.margin, stable=s.stable)
        return out


def _window_values(slr: SlrSeries, ms: MaximaSeries, i: int, k: int) -> np.ndarray:
    """|SLR| of the days covered by maxima ``i-k+1 .. i``."""
    hi = ms.block_end[i]
    lo = ms.block_end[i - k] if i - k >= 0 else None
    days = np.array([d.toordinal() for d in slr.days])
    mask = days <= hi.toordinal()
    if lo is not None:
        mask &= days > lo.toordinal()
    return np.abs(slr.slr[mask])


def analyze_symbol(bars: BarSeries, cfg: PipelineConfig) -> SymbolResult:
    """Filter, standardize, extract maxima, run the rolling fits and the VaR table for one symbol."""
    res = SymbolResult(bars.symbol)
    try:
        filtered, res.exclusions = filter_sessions(bars, cfg.filter_rules())
        res.slr = standardize(log_returns(filtered), cfg.returns.realized_window, cfg.returns.periodicity)
        if len(res.slr) == 0:
            raise InsufficientDataError(f"{bars.symbol}: no SLR after the realized-volatility warm-up")
        try:
            res.decorrelation_minutes = decorrelation_time(res.slr).minutes
        except InsufficientDataError:
            pass
        res.maxima = extract_block_maxima(res.slr, cfg.window.block_span_days)
        k = cfg.window_k
        samples = rolling_samples(res.maxima, RollingWindow(k, cfg.window.step_days))
        est = cfg.estimator_config()
        res.trajectory = fit_trajectory(samples, est, bars.symbol, cfg.gate_config(), cfg.seed, cfg.var.level)
        m = res.maxima.block_size_m
        q_raw = cfg.var.level ** (1.0 / m)
        for rec in res.trajectory.records:
            raw = _window_values(res.slr, res.maxima, rec.index, k)
            try:
                gv = gp_var(raw, q_raw, cfg.var.gp_threshold_quantile)
            except GevRiskError:
                gv = math.nan
            nv = rec.normal_var
            if cfg.var.normal_input == "raw":
                try:
                    nv = normal_var(raw, q_raw)
                except GevRiskError:
                    nv = math.nan
                rec.normal_var = nv
            res.var_rows.append({"t": rec.t, "gev_var": rec.var99, "normal_var": nv, "gp_var": gv})
        try:
            res.stability = stability(res.trajectory, k, est)
            t = res.trajectory
            t.mEVI, t.sti, t.margin, t.stable = (res.stability.mEVI, res.stability.sti,
                                                 res.stability.margin, res.stability.stable)
        except InsufficientDataError as exc:
            log.warning("%s", exc)
    except GevRiskError as exc:
        log.warning("%s: %s", bars.symbol, exc)
        res.error, res.error_type = str(exc), type(exc).__name__
    return res


def _analyze_task(args):
    return analyze_symbol(*args)


def analyze_pool(bars: list[BarSeries], cfg: PipelineConfig, jobs: int = 1) -> list[SymbolResult]:
    tasks = [(b, cfg) for b in bars]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_analyze_task, tasks))
    return [_analyze_task(t) for t in tasks]


def pool_cross_sections(results: list[SymbolResult]) -> list[dict]:
    return cross_section_series([r.trajectory for r in results if r.trajectory is not None])


# ---------------------------------------------------------------------------
# backtest, jumps, changepoints


def daily_closes(bars: list[BarSeries]) -> pd.DataFrame:
    """Last traded price (positive volume) of each local day; NaN where a symbol did not trade."""
    cols = {}
    for b in bars:
        keep = b.volumes > 0
        days = np.array(b._local_days())[keep]
        px = b.prices[keep]
        s = pd.Series(px, index=pd.to_datetime(days))
        cols[b.symbol] = s.groupby(level=0).last()
    cal = sorted({d for b in bars for d in b.calendar})
    return pd.DataFrame(cols).reindex(pd.to_datetime(cal))


def var_frames(results: list[SymbolResult]) -> dict[str, dict[str, pd.Series]]:
    """GEV and normal VaR step series per symbol, from gate-passing fits only."""
    out: dict[str, dict[str, pd.Series]] = {"gev": {}, "normal": {}}
    for r in results:
        if r.trajectory is None:
            continue
        recs = r.trajectory.passing()
        idx = pd.to_datetime([x.t for x in recs])
        out["gev"][r.symbol] = pd.Series([x.var99 for x in recs], index=idx, dtype=float)
        out["normal"][r.symbol] = pd.Series([x.normal_var for x in recs], index=idx, dtype=float)
    return out


def run_backtests(prices: pd.DataFrame, vars_: dict[str, dict[str, pd.Series]], cfg: PipelineConfig):
    b = cfg.backtest
    paths, snapshots = {}, {}
    for strategy in ("gev", "normal", "equal"):
        plan = RebalancePlan(strategy, b.period_days, b.position_reduction, 1.0, b.transaction_cost)
        states = backtest(prices, vars_.get(strategy), plan)
        paths[strategy] = states
        snaps, prev = [], None
        for s in states[1:]:
            key = (tuple(sorted(s.weights.items())), s.position_fraction)
            if key != prev:
                snaps.append({"date": s.t.date().isoformat(), "position_fraction": s.position_fraction,
                              "weights": dict(sorted(s.weights.items()))})
                prev = key
        snapshots[strategy] = snaps
    return paths, snapshots


def symbol_jumps(r: SymbolResult) -> JumpReport | None:
    if r.slr is None or r.trajectory is None:
        return None
    times, values = trajectory_thresholds(r.trajectory)
    return detect_jumps(r.slr, times, values)


def symbol_changepoints(r: SymbolResult, cfg: PipelineConfig) -> ChangepointReport | None:
    if r.trajectory is None:
        return None
    recs = thin(r.trajectory.passing(), cfg.changepoint.thin)
    if len(recs) < 20:
        log.warning("%s: %d thinned fits, BOCD needs 20", r.symbol, len(recs))
        return None
    return bocd([x.xi for x in recs], cfg.changepoint.hazard_lambda, [x.t for x in recs], r.symbol,
                confirm=cfg.changepoint.confirm)


def as_date(t) -> str:
    return t.isoformat() if isinstance(t, date) else str(t)
