"""Block maxima of |SLR| and rolling fit windows."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ParameterDomainError
from .returns import SlrSeries

log = logging.getLogger(__name__)


@dataclass
class MaximaSeries:
    """Block maxima ``values`` ending at ``block_end``.

    ``counts`` holds the number of observations inside each block; blocks
    with fewer surviving days than ``block_span_days`` are flagged ``partial``.
    """

    symbol: str
    block_end: list[Any]
    values: np.ndarray
    block_size_m: int
    block_span_days: int
    counts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    partial: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    skipped_blocks: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.block_size_m < 1:
            raise ParameterDomainError("block size must be >= 1")
        if np.any(self.values < 0):
            raise ParameterDomainError("block maxima of absolute values must be non-negative")
        if len(self.block_end) != self.values.size:
            raise ParameterDomainError("block_end and values differ in length")
        if self.counts.size == 0:
            self.counts = np.full(self.values.size, self.block_size_m)
        if self.partial.size == 0:
            self.partial = np.zeros(self.values.size, dtype=bool)

    def __len__(self) -> int:
        return self.values.size


def block_maxima(values, block_size: int) -> np.ndarray:
    """Maxima of |values| over consecutive blocks; a trailing partial block is dropped."""
    a = np.abs(np.asarray(values, dtype=float))
    n = a.size // block_size
    return a[: n * block_size].reshape(n, block_size).max(axis=1)


def extract_block_maxima(s: SlrSeries, block_span_days: int = 2) -> MaximaSeries:
    """Max |SLR| over consecutive blocks of ``block_span_days`` calendar trading days.

    A block is labeled by its last calendar day, so symbols sharing a calendar
    share fit times. Blocks whose days were all dropped, or that fall in the
    warm-up, are skipped and counted.
    """
    if len(s) == 0:
        raise ParameterDomainError(f"{s.symbol}: empty SLR series")
    if block_span_days < 1:
        raise ParameterDomainError("block span must be >= 1 day")
    cal = list(s.calendar) or sorted(set(s.days))
    block_of = {d: i // block_span_days for i, d in enumerate(cal)}
    nblocks = (len(cal) + block_span_days - 1) // block_span_days
    best = np.full(nblocks, -1.0)
    count = np.zeros(nblocks, dtype=int)
    days_seen: list[set] = [set() for _ in range(nblocks)]
    a = np.abs(s.slr)
    for d, v in zip(s.days, a):
        b = block_of[d]
        count[b] += 1
        days_seen[b].add(d)
        if v > best[b]:
            best[b] = v
    ok = count > 0
    partial = np.array([len(days_seen[i]) < block_span_days for i in range(nblocks)])
    skipped = int((~ok).sum())
    if skipped:
        log.info("%s: %d blocks without observations skipped", s.symbol, skipped)
    return MaximaSeries(
        symbol=s.symbol,
        block_end=[cal[min((i + 1) * block_span_days, len(cal)) - 1] for i in np.flatnonzero(ok)],
        values=best[ok],
        block_size_m=s.bars_per_day * block_span_days,
        block_span_days=block_span_days,
        counts=count[ok],
        partial=partial[ok],
        skipped_blocks=skipped,
    )


@dataclass(frozen=True)
class RollingWindow:
    window_maxima_count_k: int = 123
    step_days: int = 2

    def __post_init__(self) -> None:
        if self.window_maxima_count_k < 30:
            raise ParameterDomainError("rolling window must hold at least 30 maxima")
        if self.step_days < 1:
            raise ParameterDomainError("step must be >= 1 day")


@dataclass(frozen=True)
class RollingSample:
    t: Any
    index: int
    sample: np.ndarray


def rolling_samples(ms: MaximaSeries, w: RollingWindow) -> list[RollingSample]:
    """The most recent k maxima at every monitoring step; empty before warm-up."""
    k = w.window_maxima_count_k
    step = max(1, w.step_days // ms.block_span_days)
    if len(ms) < k:
        log.info("%s: %d maxima < window %d, no fits", ms.symbol, len(ms), k)
        return []
    return [
        RollingSample(ms.block_end[i], i, ms.values[i - k + 1 : i + 1])
        for i in range(k - 1, len(ms), step)
    ]


def maxima_from_array(
    values: Sequence[float], block_size: int, symbol: str = "", block_span_days: int = 1
) -> MaximaSeries:
    """Wrap plain block maxima (block index as time) in a MaximaSeries."""
    v = np.asarray(values, dtype=float)
    return MaximaSeries(symbol, list(range(v.size)), v, block_size, block_span_days)
