"""Rolling GEV fits, goodness-of-fit gates, stability indicator and pool cross-sections."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import GevRiskError, InsufficientDataError, ParameterDomainError
from .estimators import FitResult, MultiQuantileConfig, multi_quantile_fit, xi_asymptotic_variance
from .gev import GevParams, gev_cdf, gev_quantile, gev_sample
from .maxima import RollingSample

log = logging.getLogger(__name__)

STABLE_STI = 0.8


@dataclass(frozen=True)
class GateConfig:
    ks_threshold: float = 0.05
    mpi_threshold: float = 1e-4
    ks_mode: str = "two_sample"
    reference_factor: int = 10

    def __post_init__(self) -> None:
        if self.ks_mode not in ("two_sample", "one_sample"):
            raise ParameterDomainError(f"unknown KS mode {self.ks_mode!r}")
        if not 0 < self.ks_threshold < 1 or not 0 < self.mpi_threshold < 1:
            raise ParameterDomainError("gate thresholds must lie in (0, 1)")


@dataclass(frozen=True)
class GofResult:
    ks_pvalue: float
    mpi: float
    passed: bool


def record_seed(symbol: str, index: int, base: int = 0) -> np.random.SeedSequence:
    """Stable per-(symbol, fit) seed; crc32 keeps it independent of PYTHONHASHSEED."""
    return np.random.SeedSequence([int(base) & 0xFFFFFFFF, zlib.crc32(symbol.encode()), int(index)])


def gof_gate(sample, fit: FitResult | GevParams, seed, gate: GateConfig = GateConfig()) -> GofResult:
    """KS goodness of fit plus the model positivity index G(0)."""
    params = fit.params if isinstance(fit, FitResult) else fit
    x = np.asarray(sample, dtype=float)
    if gate.ks_mode == "two_sample":
        ref = gev_sample(params, gate.reference_factor * x.size, seed)
        pval = float(stats.ks_2samp(x, ref).pvalue)
    else:
        pval = float(stats.kstest(x, lambda y: gev_cdf(params, y)).pvalue)
    mpi = float(gev_cdf(params, 0.0))
    return GofResult(pval, mpi, pval > gate.ks_threshold and mpi < gate.mpi_threshold)


@dataclass
class TrajectoryRecord:
    t: Any
    index: int
    params: GevParams | None
    ks_pvalue: float = math.nan
    mpi: float = math.nan
    var99: float = math.nan
    normal_var: float = math.nan
    passed: bool = False
    error: str | None = None

    @property
    def xi(self) -> float:
        return self.params.xi if self.params else math.nan


@dataclass
class RiskTrajectory:
    symbol: str
    records: list[TrajectoryRecord]
    mEVI: float = math.nan
    sti: float = math.nan
    margin: float = math.nan
    stable: bool = False
    _by_t: dict | None = field(default=None, init=False, repr=False, compare=False)

    def passing(self) -> list[TrajectoryRecord]:
        return [r for r in self.records if r.passed]

    def at(self, t) -> TrajectoryRecord | None:
        if self._by_t is None or len(self._by_t) != len(self.records):
            self._by_t = {r.t: r for r in self.records}
        return self._by_t.get(t)

    def rows(self) -> list[dict]:
        out = []
        for r in self.records:
            p = r.params
            out.append(
                {
                    "t": r.t,
                    "xi": p.xi if p else math.nan,
                    "mu": p.mu if p else math.nan,
                    "sigma": p.sigma if p else math.nan,
                    "ks_pvalue": r.ks_pvalue,
                    "mpi": r.mpi,
                    "var99": r.var99,
                    "pass": r.passed,
                }
            )
        return out


def fit_trajectory(
    samples: Sequence[RollingSample],
    cfg: MultiQuantileConfig | None = None,
    symbol: str = "",
    gate: GateConfig = GateConfig(),
    seed: int = 0,
    var_level: float = 0.99,
) -> RiskTrajectory:
    """One GEV fit per monitoring time; estimator failures become records with ``error`` set."""
    from .var import normal_var  # local: var depends on monitor's record types

    cfg = cfg or MultiQuantileConfig()
    records = []
    for s in samples:
        try:
            fit = multi_quantile_fit(s.sample, cfg)
        except GevRiskError as exc:
            records.append(TrajectoryRecord(s.t, s.index, None, error=f"{type(exc).__name__}: {exc}"))
            continue
        g = gof_gate(s.sample, fit, record_seed(symbol, s.index, seed), gate)
        try:
            nv = normal_var(s.sample, var_level)
        except GevRiskError:
            nv = math.nan
        records.append(
            TrajectoryRecord(
                t=s.t,
                index=s.index,
                params=fit.params,
                ks_pvalue=g.ks_pvalue,
                mpi=g.mpi,
                var99=float(gev_quantile(fit.params, var_level)),
                normal_var=nv,
                passed=g.passed,
            )
        )
    return RiskTrajectory(symbol, records)


@dataclass(frozen=True)
class Stability:
    mEVI: float
    sti: float
    margin: float
    stable: bool
    n_records: int


def stability(
    traj: RiskTrajectory, k: int, cfg: MultiQuantileConfig | None = None, min_records: int = 30
) -> Stability:
    """mEVI, error margin 1.96*sqrt(Sigma(mEVI)/k) and the in-margin frequency STI.

    Only gate-passing records take part.
    """
    xs = np.array([r.xi for r in traj.passing()])
    if xs.size < min_records:
        raise InsufficientDataError(
            f"{traj.symbol}: {xs.size} passing fits, need {min_records} for the stability test"
        )
    m = float(xs.mean())
    margin = 1.96 * math.sqrt(xi_asymptotic_variance(m, cfg) / k)
    sti = float(np.mean(np.abs(xs - m) <= margin))
    return Stability(m, sti, margin, sti > STABLE_STI, int(xs.size))


def annotate_stability(traj: RiskTrajectory, k: int, cfg: MultiQuantileConfig | None = None) -> RiskTrajectory:
    st = stability(traj, k, cfg)
    traj.mEVI, traj.sti, traj.margin, traj.stable = st.mEVI, st.sti, st.margin, st.stable
    return traj


@dataclass(frozen=True)
class CrossSection:
    t: Any
    low: float
    mid: float
    high: float


def cross_section(pool: Iterable[RiskTrajectory], t, field_name: str = "xi") -> CrossSection:
    """0.05 / 0.5 / 0.95 quantiles across symbols of the passing records at ``t``."""
    vals = []
    for traj in pool:
        r = traj.at(t)
        if r is not None and r.passed:
            vals.append(r.xi if field_name == "xi" else getattr(r, field_name))
    if len(vals) < 2:
        raise InsufficientDataError(f"cross-section at {t} needs 2 symbols, got {len(vals)}")
    low, mid, high = np.quantile(np.asarray(vals, dtype=float), [0.05, 0.5, 0.95])
    return CrossSection(t, float(low), float(mid), float(high))


def cross_section_series(pool: Sequence[RiskTrajectory]) -> list[dict]:
    times = sorted({r.t for traj in pool for r in traj.records})
    out = []
    for t in times:
        try:
            e = cross_section(pool, t, "xi")
            v = cross_section(pool, t, "var99")
        except InsufficientDataError:
            continue
        out.append(
            {
                "t": t,
                "low_evi": e.low,
                "mid_evi": e.mid,
                "high_evi": e.high,
                "low_var": v.low,
                "mid_var": v.mid,
                "high_var": v.high,
            }
        )
    return out
