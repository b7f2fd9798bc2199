from datetime import date

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gevrisk.errors import ParameterDomainError
from gevrisk.maxima import (
    MaximaSeries, RollingWindow, block_maxima, extract_block_maxima, maxima_from_array, rolling_samples,
)
from gevrisk.returns import SlrSeries

from helpers import weekdays


def slr_series(days_values: dict, calendar=None, bars=3):
    days, vals = [], []
    for d in sorted(days_values):
        days += [d] * len(days_values[d])
        vals += list(days_values[d])
    cal = tuple(calendar) if calendar else tuple(sorted(days_values))
    return SlrSeries("S", [None] * len(vals), days, np.zeros(len(vals), dtype=int), np.array(vals, dtype=float),
                     bars, 10, cal)


class TestBlockMaxima:
    def test_small(self):
        assert block_maxima([1, -3, 2, -5, 4, -6], 3).tolist() == [3, 6]

    def test_constant(self):
        assert np.all(block_maxima(np.full(40, -2.5), 8) == 2.5)

    def test_partial_dropped(self):
        assert block_maxima(np.arange(10.0), 4).tolist() == [3, 7]

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200), st.integers(1, 20))
    def test_partition_exact(self, xs, m):
        a = np.array(xs)
        got = block_maxima(a, m)
        n = a.size // m
        assert got.size == n
        for i in range(n):
            assert got[i] == max(abs(v) for v in xs[i * m: (i + 1) * m])

    def test_half_normal_mean(self):
        rng = np.random.default_rng(1)
        ys = block_maxima(rng.normal(size=46 * 10**5 // 46 * 46), 46)
        ref = np.abs(np.random.default_rng(2).normal(size=(200_000, 46))).max(axis=1).mean()
        assert ys.mean() == pytest.approx(ref, rel=0.03)


class TestExtract:
    def test_two_day_blocks(self):
        d = weekdays(4)
        s = slr_series({d[0]: [1, -2, 0.5], d[1]: [0.1, 3, -1], d[2]: [-4, 1, 1], d[3]: [0, 0, 2]})
        ms = extract_block_maxima(s, 2)
        assert ms.values.tolist() == [3, 4]
        assert ms.block_end == [d[1], d[3]]
        assert ms.block_size_m == 6
        assert ms.counts.tolist() == [6, 6] and not ms.partial.any()

    def test_dropped_day_shrinks_block(self):
        d = weekdays(4)
        s = slr_series({d[0]: [1, -2, 0.5], d[2]: [-4, 1, 1], d[3]: [0, 0, 2]}, calendar=d)
        ms = extract_block_maxima(s, 2)
        assert ms.values.tolist() == [2, 4]
        assert ms.block_end == [d[1], d[3]]
        assert ms.partial.tolist() == [True, False]

    def test_empty_block_skipped(self):
        d = weekdays(6)
        s = slr_series({d[0]: [1], d[1]: [2], d[4]: [5], d[5]: [1]}, calendar=d, bars=1)
        ms = extract_block_maxima(s, 2)
        assert ms.skipped_blocks == 1
        assert ms.block_end == [d[1], d[5]]

    @given(st.integers(1, 30), st.integers(1, 4), st.integers(0, 10**6))
    def test_blocks_partition_days(self, ndays, span, seed):
        rng = np.random.default_rng(seed)
        d = weekdays(ndays)
        vals = {x: rng.normal(size=3) for x in d if rng.random() > 0.2}
        if not vals:
            return
        ms = extract_block_maxima(slr_series(vals, calendar=d), span)
        assert ms.counts.sum() == sum(v.size for v in vals.values())
        ends = [d.index(e) for e in ms.block_end]
        assert all((e + 1) % span == 0 or e == ndays - 1 for e in ends)
        assert ends == sorted(set(ends))

    def test_invalid(self):
        with pytest.raises(ParameterDomainError):
            MaximaSeries("S", [0], np.array([-1.0]), 5, 1)


class TestRolling:
    def test_exact_window(self):
        ms = maxima_from_array(np.arange(123.0), 46)
        out = rolling_samples(ms, RollingWindow(123, 1))
        assert len(out) == 1 and out[0].t == 122 and out[0].sample.size == 123

    def test_overlap(self):
        ms = maxima_from_array(np.arange(125.0), 46)
        out = rolling_samples(ms, RollingWindow(123, 1))
        assert len(out) == 3
        for a, b in zip(out, out[1:]):
            assert np.array_equal(a.sample[1:], b.sample[:-1])

    def test_too_short(self):
        assert rolling_samples(maxima_from_array(np.arange(50.0), 46), RollingWindow(123, 1)) == []

    def test_step_in_days(self):
        ms = maxima_from_array(np.arange(140.0), 46, block_span_days=2)
        out = rolling_samples(ms, RollingWindow(123, 4))
        assert [s.index for s in out] == list(range(122, 140, 2))

    @given(st.integers(30, 80), st.integers(0, 60), st.integers(1, 5))
    def test_window_sizes(self, k, extra, step):
        ms = maxima_from_array(np.arange(float(k + extra)), 10)
        out = rolling_samples(ms, RollingWindow(k, step))
        assert all(s.sample.size == k for s in out)
        assert len(out) == extra // step + 1
        assert all(b.index - a.index == step for a, b in zip(out, out[1:]))

    def test_min_k(self):
        with pytest.raises(ParameterDomainError):
            RollingWindow(29, 2)
