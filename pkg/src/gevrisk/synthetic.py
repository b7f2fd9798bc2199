"""Synthetic one-minute bars for tests and demos."""

from __future__ import annotations

import csv
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

from .returns import BarSeries, SessionSpec


def trading_days(start: date, n: int) -> list[date]:
    """``n`` consecutive weekdays from ``start``."""
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def synthetic_bars(
    symbol: str,
    session: SessionSpec,
    n_days: int,
    seed: int = 0,
    start: date = date(2015, 1, 5),
    minute_vol: float = 1e-3,
    tail_df: float = 5.0,
    u_shape: float = 0.5,
    trade_prob: float = 1.0,
    price0: float = 20.0,
) -> BarSeries:
    """Student-t minute log-returns with a U-shaped intraday volatility profile.

    Every session minute carries one bar stamped at the minute's end, kept with
    probability ``trade_prob``.
    """
    rng = np.random.default_rng(seed)
    tz = ZoneInfo(session.timezone)
    mins = session.minutes_per_day
    u = np.linspace(-1.0, 1.0, mins)
    profile = 1.0 + u_shape * (u * u - 1.0 / 3.0)
    scale = minute_vol / np.sqrt(tail_df / (tail_df - 2.0))
    stamps, prices, vols = [], [], []
    logp = np.log(price0)
    for d in trading_days(start, n_days):
        steps = rng.standard_t(tail_df, mins) * scale * profile
        path = logp + np.cumsum(steps)
        keep = rng.random(mins) < trade_prob
        vol = rng.integers(100, 10_000, mins)
        k = 0
        for o, c in session.bounds:
            for minute in range(o + 1, c + 1):
                if keep[k]:
                    local = datetime.combine(d, time(0), tzinfo=tz) + timedelta(minutes=minute)
                    stamps.append(local.astimezone(timezone.utc).replace(tzinfo=None))
                    prices.append(float(np.exp(path[k])))
                    vols.append(int(vol[k]))
                k += 1
        logp = path[-1] + rng.normal(0.0, 5 * minute_vol)
    return BarSeries(symbol, np.array(stamps, dtype="datetime64[ns]"), prices, vols, session)


def write_bars_csv(b: BarSeries, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "price", "volume"])
        for t, p, v in zip(b.timestamps, b.prices, b.volumes):
            w.writerow([np.datetime_as_string(t, unit="s") + "Z", repr(float(p)), int(v)])
    return path
