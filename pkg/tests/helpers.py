from datetime import date, datetime, time, timedelta, timezone
from zoneinfo import ZoneInfo

import numpy as np

from gevrisk.returns import PROFILES, BarSeries, SessionSpec

CN = PROFILES["cn"]


def day_bars(session: SessionSpec, day: date, prices, volumes=None):
    """One bar per session minute (stamped at minute end); NaN prices are omitted."""
    tz = ZoneInfo(session.timezone)
    minutes = [m for o, c in session.bounds for m in range(o + 1, c + 1)]
    prices = np.asarray(prices, dtype=float)
    assert prices.size == len(minutes)
    vols = np.full(prices.size, 100.0) if volumes is None else np.asarray(volumes, dtype=float)
    out = []
    for m, p, v in zip(minutes, prices, vols):
        if np.isnan(p):
            continue
        local = datetime.combine(day, time(0), tzinfo=tz) + timedelta(minutes=m)
        out.append((local.astimezone(timezone.utc).replace(tzinfo=None), p, v))
    return out


def make_bars(session: SessionSpec, days_prices: dict, symbol="SYM", volumes: dict | None = None) -> BarSeries:
    rows = []
    for d in sorted(days_prices):
        rows += day_bars(session, d, days_prices[d], (volumes or {}).get(d))
    ts = np.array([np.datetime64(r[0], "ns") for r in rows])
    return BarSeries(symbol, ts, [r[1] for r in rows], [r[2] for r in rows], session)


def random_walk_day(session: SessionSpec, rng, scale=1e-3, start=10.0):
    n = session.minutes_per_day
    return start * np.exp(np.cumsum(rng.normal(0, scale, n)))


def weekdays(n, start=date(2020, 1, 6)):
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out
