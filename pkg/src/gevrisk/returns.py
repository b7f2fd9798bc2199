"""Bar ingestion, session filters and standardized log-returns.

Prices are sampled at the close of each ``bar_minutes`` interval of the
trading session (last traded price inside the interval). Returns never span
two trading days; a lunch break inside one day is treated as contiguous.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

from .errors import DataError, EmptySeriesError, InsufficientDataError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# sessions and bars


def _hm(s: str) -> int:
    h, m = s.split(":")
    return int(h) * 60 + int(m)


@dataclass(frozen=True)
class SessionSpec:
    """Exchange-local trading sessions of one day, e.g. ``(("09:30", "11:30"), ...)``."""

    timezone: str
    sessions: tuple[tuple[str, str], ...]
    bar_minutes: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "sessions", tuple(tuple(s) for s in self.sessions))
        prev_close = -1
        for open_, close in self.sessions:
            o, c = _hm(open_), _hm(close)
            if not prev_close <= o < c:
                raise DataError(f"sessions must be ordered and non-overlapping: {self.sessions}")
            if (c - o) % self.bar_minutes:
                raise DataError(
                    f"bar of {self.bar_minutes} min does not divide session {open_}-{close}"
                )
            prev_close = c
        ZoneInfo(self.timezone)

    @property
    def bounds(self) -> list[tuple[int, int]]:
        return [(_hm(o), _hm(c)) for o, c in self.sessions]

    @property
    def minutes_per_day(self) -> int:
        return sum(c - o for o, c in self.bounds)

    @property
    def intervals_per_day(self) -> int:
        return self.minutes_per_day // self.bar_minutes

    @property
    def returns_per_day(self) -> int:
        return self.intervals_per_day - 1

    def interval_end(self, day: date, j: int) -> datetime:
        """Local end time of interval ``j`` (0-based) on ``day``."""
        minute = (j + 1) * self.bar_minutes
        for o, c in self.bounds:
            if minute <= c - o:
                t = o + minute
                break
            minute -= c - o
        else:
            raise IndexError(j)
        return datetime.combine(day, time(t // 60, t % 60), tzinfo=ZoneInfo(self.timezone))


PROFILES = {
    "cn": SessionSpec("Asia/Shanghai", (("09:30", "11:30"), ("13:00", "15:00"))),
    "us": SessionSpec("America/New_York", (("09:30", "16:00"),)),
}


@dataclass
class BarSeries:
    """Raw bars of one symbol.

    ``calendar`` lists every trading day seen in the raw input; it survives
    filtering so that block boundaries do not shift when days are dropped.
    """

    symbol: str
    timestamps: np.ndarray  # datetime64[ns], UTC
    prices: np.ndarray
    volumes: np.ndarray
    session: SessionSpec
    calendar: tuple[date, ...] = ()

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[ns]")
        self.prices = np.asarray(self.prices, dtype=float)
        self.volumes = np.asarray(self.volumes, dtype=float)
        if not (len(self.timestamps) == len(self.prices) == len(self.volumes)):
            raise DataError("bar arrays must have equal length")
        if np.any(np.diff(self.timestamps.astype(np.int64)) <= 0):
            raise DataError(f"{self.symbol}: timestamps must be strictly increasing")
        if np.any(self.prices <= 0):
            raise DataError(f"{self.symbol}: prices must be positive")
        if np.any(self.volumes < 0):
            raise DataError(f"{self.symbol}: volumes must be non-negative")
        if not self.calendar:
            self.calendar = tuple(sorted(set(self._local_days())))

    def __len__(self) -> int:
        return len(self.prices)

    def _local(self) -> list[datetime]:
        tz = ZoneInfo(self.session.timezone)
        secs = self.timestamps.astype("datetime64[ns]").astype(np.int64) / 1e9
        return [datetime.fromtimestamp(s, tz) for s in secs]

    def _local_days(self) -> list[date]:
        return [d.date() for d in self._local()]

    def subset(self, mask: np.ndarray) -> "BarSeries":
        return replace(
            self,
            timestamps=self.timestamps[mask],
            prices=self.prices[mask],
            volumes=self.volumes[mask],
        )


def _parse_ts(raw: str) -> datetime:
    raw = raw.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks a timezone")
    return ts


def read_bars_csv(path: str | Path, session: SessionSpec, symbol: str | None = None) -> BarSeries:
    """Load ``timestamp,price,volume`` rows; malformed rows are skipped and logged."""
    path = Path(path)
    symbol = symbol or path.stem
    rows: list[tuple[datetime, float, float]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["timestamp", "price", "volume"]:
            raise DataError(f"{path}: expected header 'timestamp,price,volume'")
        for lineno, row in enumerate(reader, start=2):
            try:
                if len(row) != 3:
                    raise ValueError(f"expected 3 fields, got {len(row)}")
                ts = _parse_ts(row[0])
                price, vol = float(row[1]), float(row[2])
                if not (math.isfinite(price) and price > 0 and math.isfinite(vol) and vol >= 0):
                    raise ValueError("price must be positive and volume non-negative")
            except ValueError as exc:
                log.warning("%s:%d: skipping malformed row (%s)", path, lineno, exc)
                continue
            if rows and ts <= rows[-1][0]:
                log.warning("%s:%d: skipping out-of-order timestamp", path, lineno)
                continue
            rows.append((ts, price, vol))
    if not rows:
        raise DataError(f"{path}: no valid rows")
    stamps = np.array([np.datetime64(r[0].astimezone(ZoneInfo("UTC")).replace(tzinfo=None), "ns") for r in rows])
    return BarSeries(
        symbol=symbol,
        timestamps=stamps,
        prices=np.array([r[1] for r in rows]),
        volumes=np.array([r[2] for r in rows]),
        session=session,
    )


# ---------------------------------------------------------------------------
# per-day grids


@dataclass
class _DayGrid:
    day: date
    minute_price: np.ndarray  # NaN where no trade
    interval_price: np.ndarray
    bar_index: np.ndarray  # indices into the parent BarSeries


def _day_grids(b: BarSeries) -> list[_DayGrid]:
    sess = b.session
    bounds = sess.bounds
    offsets = np.cumsum([0] + [c - o for o, c in bounds])
    local = b._local()
    by_day: dict[date, list[tuple[int, int]]] = {}
    for i, ts in enumerate(local):
        sec = ts.hour * 3600 + ts.minute * 60 + ts.second + ts.microsecond / 1e6
        slot = None
        for s, (o, c) in enumerate(bounds):
            if o * 60 <= sec <= c * 60:
                within = max(math.ceil((sec - o * 60) / 60.0) - 1, 0)
                slot = int(offsets[s] + within)
                break
        if slot is None:
            continue
        by_day.setdefault(ts.date(), []).append((slot, i))

    grids = []
    m = sess.minutes_per_day
    for day in sorted(by_day):
        minute_price = np.full(m, np.nan)
        idx = []
        for slot, i in by_day[day]:
            minute_price[slot] = b.prices[i]  # later bars overwrite earlier ones
            idx.append(i)
        per = minute_price.reshape(sess.intervals_per_day, sess.bar_minutes)
        interval_price = np.full(sess.intervals_per_day, np.nan)
        for j, row in enumerate(per):
            ok = np.flatnonzero(~np.isnan(row))
            if ok.size:
                interval_price[j] = row[ok[-1]]
        grids.append(_DayGrid(day, minute_price, interval_price, np.array(idx, dtype=int)))
    return grids


def _longest_run(flags: np.ndarray) -> int:
    best = run = 0
    for f in flags:
        run = run + 1 if f else 0
        best = max(best, run)
    return best


# ---------------------------------------------------------------------------
# filtering


@dataclass(frozen=True)
class FilterRules:
    max_consecutive_missing: int = 3
    max_flat_minutes: int = 30
    min_active_minutes: int = 90


@dataclass
class ExclusionReport:
    symbol: str
    days_total: int
    days_retained: int
    dropped: list[dict] = field(default_factory=list)
    zero_volume_bars: int = 0
    off_session_bars: int = 0

    @property
    def active_fraction(self) -> float:
        return self.days_retained / self.days_total if self.days_total else 0.0

    def to_dict(self) -> dict:
        return {
            "symbol": self.symbol,
            "days_total": self.days_total,
            "days_retained": self.days_retained,
            "active_fraction": self.active_fraction,
            "zero_volume_bars": self.zero_volume_bars,
            "off_session_bars": self.off_session_bars,
            "dropped": self.dropped,
        }


def day_violations(grid: _DayGrid, rules: FilterRules) -> list[str]:
    fired = []
    if _longest_run(np.isnan(grid.interval_price)) > rules.max_consecutive_missing:
        fired.append("consecutive_missing")
    mp = grid.minute_price
    moved = np.zeros(mp.size, dtype=bool)
    last = np.nan
    for i, p in enumerate(mp):
        if not np.isnan(p):
            moved[i] = not np.isnan(last) and p != last
            last = p
    if _longest_run(~moved) > rules.max_flat_minutes:
        fired.append("flat_minutes")
    if moved.sum() < rules.min_active_minutes:
        fired.append("low_activity")
    return fired


def filter_sessions(raw: BarSeries, rules: FilterRules = FilterRules()) -> tuple[BarSeries, ExclusionReport]:
    """Drop zero-volume bars and every day that breaks a data-quality rule."""
    if len(raw) == 0:
        raise EmptySeriesError(f"{raw.symbol}: no bars")
    nonzero = raw.volumes > 0
    traded = raw.subset(nonzero)
    grids = _day_grids(traded)
    keep = np.zeros(len(traded), dtype=bool)
    report = ExclusionReport(
        raw.symbol,
        days_total=len(raw.calendar),
        days_retained=0,
        zero_volume_bars=int((~nonzero).sum()),
    )
    in_session = 0
    seen = set()
    for g in grids:
        seen.add(g.day)
        in_session += g.bar_index.size
        fired = day_violations(g, rules)
        if fired:
            report.dropped.append({"date": g.day.isoformat(), "rule": fired[0], "rules": fired})
        else:
            keep[g.bar_index] = True
            report.days_retained += 1
    for day in raw.calendar:
        if day not in seen:
            report.dropped.append({"date": day.isoformat(), "rule": "no_trades", "rules": ["no_trades"]})
    report.dropped.sort(key=lambda d: d["date"])
    report.off_session_bars = len(traded) - in_session
    if not keep.any():
        raise EmptySeriesError(f"{raw.symbol}: every trading day was dropped by the filters")
    return traded.subset(keep), report


# ---------------------------------------------------------------------------
# returns


@dataclass
class ReturnSeries:
    symbol: str
    timestamps: list[datetime]
    days: list[date]
    bins: np.ndarray
    lr: np.ndarray
    returns_per_day: int
    delta_minutes: int
    calendar: tuple[date, ...]


def log_returns(b: BarSeries, delta_minutes: int | None = None) -> ReturnSeries:
    """Intraday log-returns between consecutive interval closes.

    A return spanning missing intervals is taken across the gap; its bin is
    the ending interval index minus one, so bins run over 0..returns_per_day-1.
    """
    sess = b.session
    if delta_minutes is not None and delta_minutes != sess.bar_minutes:
        if sess.minutes_per_day % delta_minutes:
            raise DataError(f"{delta_minutes} min does not divide the session")
        sess = replace(sess, bar_minutes=delta_minutes)
        b = replace(b, session=sess)
    stamps: list[datetime] = []
    days: list[date] = []
    bins: list[int] = []
    lrs: list[float] = []
    for g in _day_grids(b):
        ok = np.flatnonzero(~np.isnan(g.interval_price))
        logp = np.log(g.interval_price[ok])
        for a, c, d in zip(ok[:-1], ok[1:], np.diff(logp)):
            stamps.append(sess.interval_end(g.day, int(c)))
            days.append(g.day)
            bins.append(int(c) - 1)
            lrs.append(float(d))
    return ReturnSeries(
        symbol=b.symbol,
        timestamps=stamps,
        days=days,
        bins=np.array(bins, dtype=int),
        lr=np.array(lrs),
        returns_per_day=sess.returns_per_day,
        delta_minutes=sess.bar_minutes,
        calendar=b.calendar,
    )


def realized_std(lr, i: int, K: int) -> float:
    """sqrt(pi/(2K) * sum_{j=1..K} |LR_{i-j}| |LR_{i-j+1}|)."""
    x = np.abs(np.asarray(lr, dtype=float))
    if i - K < 0 or i >= x.size:
        raise InsufficientDataError(f"index {i} lacks {K} returns of history")
    prods = x[i - K : i] * x[i - K + 1 : i + 1]
    return math.sqrt(math.pi / (2 * K) * float(prods.sum()))


def realized_std_series(lr, K: int) -> np.ndarray:
    """Vectorized ``realized_std`` for every index; NaN during warm-up."""
    x = np.abs(np.asarray(lr, dtype=float))
    out = np.full(x.size, np.nan)
    if x.size <= K:
        return out
    prods = x[:-1] * x[1:]  # prods[t - 1] = |x[t-1]||x[t]|
    # direct windowed sums; a running cumsum would cancel badly after large returns
    window = np.convolve(prods, np.ones(K), mode="valid")
    out[K:] = np.sqrt(np.maximum(math.pi / (2 * K) * window, 0.0))
    return out


def periodicity_factor(lr_matrix, min_days: int = 20, floor: float = 0.1) -> np.ndarray:
    """Median-ratio intraday periodicity factors for a (days x bins) matrix.

    NaN entries are ignored. Factors are scaled to mean one, then floored.
    """
    a = np.abs(np.asarray(lr_matrix, dtype=float))
    if a.ndim != 2:
        raise ValueError("expected a days x bins matrix")
    if a.shape[0] < min_days:
        raise InsufficientDataError(f"periodicity needs {min_days} days, got {a.shape[0]}")
    if a.shape[1] == 1:
        return np.ones(1)
    grand = np.nanmedian(a)
    if not grand > 0:
        return np.ones(a.shape[1])
    with np.errstate(all="ignore"):
        f = np.nanmedian(a, axis=0) / grand
    f = np.where(np.isfinite(f), f, 1.0)
    f = f / f.mean()
    return np.maximum(f, floor)


@dataclass
class SlrSeries:
    symbol: str
    timestamps: list[datetime]
    days: list[date]
    bins: np.ndarray
    slr: np.ndarray
    bars_per_day: int
    delta_minutes: int
    calendar: tuple[date, ...]
    decorrelation_minutes: float = math.nan
    warmup: int = 0
    skipped_zero_std: int = 0
    periodicity: np.ndarray | None = None

    def __len__(self) -> int:
        return self.slr.size


def _day_bin_matrix(days: list[date], bins: np.ndarray, values: np.ndarray, nbins: int):
    uniq = sorted(set(days))
    row = {d: i for i, d in enumerate(uniq)}
    mat = np.full((len(uniq), nbins), np.nan)
    for d, b, v in zip(days, bins, values):
        mat[row[d], b] = v
    return mat


def standardize(r: ReturnSeries, K: int = 500, periodicity: bool = True) -> SlrSeries:
    """SLR = LR / (realized_std * f_bin).

    Periodicity factors are estimated on the volatility-filtered returns
    LR / realized_std. With fewer than 20 usable days the factors are 1.
    """
    std = realized_std_series(r.lr, K)
    warm = ~np.isnan(std)
    zero = warm & (std == 0)
    use = warm & ~zero
    idx = np.flatnonzero(use)
    u = r.lr[idx] / std[idx]
    days = [r.days[i] for i in idx]
    bins = r.bins[idx]
    nbins = max(r.returns_per_day, int(bins.max()) + 1 if bins.size else 1)
    f = np.ones(nbins)
    if periodicity and idx.size:
        mat = _day_bin_matrix(days, bins, u, nbins)
        try:
            f = periodicity_factor(mat)
        except InsufficientDataError:
            log.warning("%s: fewer than 20 days, periodicity factors set to 1", r.symbol)
    return SlrSeries(
        symbol=r.symbol,
        timestamps=[r.timestamps[i] for i in idx],
        days=days,
        bins=bins,
        slr=u / f[bins],
        bars_per_day=r.returns_per_day,
        delta_minutes=r.delta_minutes,
        calendar=r.calendar,
        warmup=int((~warm).sum()),
        skipped_zero_std=int(zero.sum()),
        periodicity=f,
    )


# ---------------------------------------------------------------------------
# decorrelation


@dataclass(frozen=True)
class Decorrelation:
    lag: int
    minutes: float
    capped: bool
    band: float


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Sample ACF at lags 0..max_lag (biased normalization)."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    n = x.size
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    return acov / acov[0] if acov[0] > 0 else np.zeros(max_lag + 1)


def decorrelation_time(
    values, delta_minutes: float = 10.0, bars_per_day: int = 23, stay: int = 5, cap_days: int = 10
) -> Decorrelation:
    """Smallest lag after which the ACF of |x| stays inside +-1.96/sqrt(n) for ``stay`` more lags."""
    a = np.abs(np.asarray(values.slr if isinstance(values, SlrSeries) else values, dtype=float))
    if isinstance(values, SlrSeries):
        delta_minutes, bars_per_day = values.delta_minutes, values.bars_per_day
    n = a.size
    if n < 500:
        raise InsufficientDataError(f"decorrelation needs 500 points, got {n}")
    cap = min(cap_days * bars_per_day, n - stay - 2)
    acf = autocorrelation(a, cap + stay)
    band = 1.96 / math.sqrt(n)
    inside = np.abs(acf) <= band
    for lag in range(1, cap + 1):
        if inside[lag : lag + stay + 1].all():
            return Decorrelation(lag, lag * delta_minutes, False, band)
    return Decorrelation(cap, cap * delta_minutes, True, band)
