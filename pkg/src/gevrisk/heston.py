"""Canonical Heston simulation and the GEV validation experiment on simulated returns.

The canonical variance SDE dV = (z - V) ds + sqrt(V) dH is stepped with the
implicit Milstein scheme

    V_{n+1} = (V_n + z eps + sqrt(V_n) dW_n + (dW_n^2 - eps) / 4) / (1 + eps),

which keeps V positive whenever z > 1/2, and log P moves by sqrt(V_n) dB_n.
Gaussian increments come from numpy's PCG64 generator in chunks; the stepping
loop is compiled with numba.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numba
import numpy as np
from scipy import stats

from .errors import ConfigError, GevRiskError, SchemeFailureError
from .estimators import MultiQuantileConfig
from .gev import GevParams, gev_quantile
from .maxima import RollingWindow, block_maxima, maxima_from_array, rolling_samples
from .monitor import GateConfig, fit_trajectory, stability
from .var import gp_var

log = logging.getLogger(__name__)

MAX_CLAMP_FRACTION = 1e-3
_CHUNK_STEPS = 1 << 20


@dataclass(frozen=True)
class HestonConfig:
    z: float
    epsilon: float = 1 / 14400
    horizon_T: float = 896.0
    delta: float = 1 / 240
    rho: float = 0.0
    v0: float | None = None
    seed: int = 0
    burn_in: float = 0.0

    def __post_init__(self) -> None:
        if not self.z > 0.5:
            raise ConfigError(
                f"z = {self.z} violates the Feller condition z = kappa*theta/gamma^2 > 1/2"
            )
        if not -1 <= self.rho <= 1:
            raise ConfigError(f"correlation rho must lie in [-1, 1], got {self.rho}")
        if not (self.epsilon > 0 and self.horizon_T > 0 and self.delta > 0):
            raise ConfigError("epsilon, horizon and delta must be positive")
        if self.v0 is not None and self.v0 <= 0:
            raise ConfigError("initial variance must be positive")
        self.steps_per_obs
        self.n_obs

    @property
    def steps_per_obs(self) -> int:
        r = self.delta / self.epsilon
        n = round(r)
        if n < 1 or abs(r - n) > 1e-6 * r:
            raise ConfigError(f"delta {self.delta} is not a multiple of epsilon {self.epsilon}")
        return n

    @property
    def n_obs(self) -> int:
        r = self.horizon_T / self.delta
        n = round(r)
        if abs(r - n) > 1e-6 * r:
            raise ConfigError(f"delta {self.delta} does not divide horizon {self.horizon_T}")
        return n

    @property
    def initial_variance(self) -> float:
        return self.z if self.v0 is None else self.v0


@dataclass
class SimPath:
    """Simulation output at the observation scale ``delta`` of its config.

    ``lr`` and ``integrated_variance`` are per observation interval;
    ``v_start`` is the spot variance at each interval start. The full
    epsilon-grid arrays are kept only on request.
    """

    cfg: HestonConfig
    lr: np.ndarray
    integrated_variance: np.ndarray
    v_start: np.ndarray
    clamps: int = 0
    v_grid: np.ndarray | None = None
    logp_grid: np.ndarray | None = None


@numba.njit(cache=True)
def _step_chunk(v, z, eps, rho, dw, dperp, lr, iv, v0, vgrid, lgrid, gpos, lp, vol_noise, frozen):
    nint, m = dw.shape
    keep = vgrid.size > 0
    sq = math.sqrt(1.0 - rho * rho)
    clamps = 0
    for i in range(nint):
        v0[i] = v
        s_lr = 0.0
        s_iv = 0.0
        for j in range(m):
            w = dw[i, j]
            sv = math.sqrt(v)
            inc = sv * (rho * w + sq * dperp[i, j])
            s_lr += inc
            s_iv += v * eps
            lp += inc
            if not frozen:
                if vol_noise:
                    vn = (v + z * eps + sv * w + 0.25 * (w * w - eps)) / (1.0 + eps)
                else:
                    vn = (v + z * eps) / (1.0 + eps)
                if vn < 0.0:
                    vn = 0.0
                    clamps += 1
                v = vn
            if keep:
                gpos += 1
                vgrid[gpos] = v
                lgrid[gpos] = lp
        lr[i] = s_lr
        iv[i] = s_iv
    return v, lp, gpos, clamps


def simulate_path(
    cfg: HestonConfig,
    keep_grid: bool = False,
    vol_noise: bool = True,
    fixed_variance: float | None = None,
) -> SimPath:
    """Simulate one path.

    ``vol_noise=False`` drops the whole stochastic part of the variance step
    (deterministic mean reversion) and ``fixed_variance`` pins V to a
    constant; both are test hooks.
    """
    m = cfg.steps_per_obs
    n = cfg.n_obs
    rng = np.random.default_rng(cfg.seed)
    sqeps = math.sqrt(cfg.epsilon)
    v = float(fixed_variance) if fixed_variance is not None else cfg.initial_variance
    frozen = fixed_variance is not None

    empty = np.empty(0)
    if cfg.burn_in > 0:
        nb = max(1, round(cfg.burn_in / cfg.delta))
        tmp = np.empty(nb)
        dw = rng.standard_normal((nb, m)) * sqeps
        dp = rng.standard_normal((nb, m)) * sqeps
        v, _, _, _ = _step_chunk(v, cfg.z, cfg.epsilon, cfg.rho, dw, dp, tmp, tmp.copy(), tmp.copy(),
                                 empty, empty, 0, 0.0, vol_noise, frozen)

    lr = np.empty(n)
    iv = np.empty(n)
    v0 = np.empty(n)
    vgrid = np.empty(n * m + 1) if keep_grid else empty
    lgrid = np.empty(n * m + 1) if keep_grid else empty
    if keep_grid:
        vgrid[0] = v
        lgrid[0] = 0.0
    per_chunk = max(1, _CHUNK_STEPS // m)
    lp = 0.0
    gpos = 0
    clamps = 0
    for start in range(0, n, per_chunk):
        stop = min(start + per_chunk, n)
        dw = rng.standard_normal((stop - start, m))
        dw *= sqeps
        dp = rng.standard_normal((stop - start, m))
        dp *= sqeps
        v, lp, gpos, c = _step_chunk(
            v, cfg.z, cfg.epsilon, cfg.rho, dw, dp,
            lr[start:stop], iv[start:stop], v0[start:stop],
            vgrid, lgrid, gpos, lp, vol_noise, frozen,
        )
        clamps += c
    if clamps > MAX_CLAMP_FRACTION * n * m:
        raise SchemeFailureError(f"variance clamped at 0 in {clamps} of {n * m} steps")
    return SimPath(cfg, lr, iv, v0, clamps,
                   vgrid if keep_grid else None, lgrid if keep_grid else None)


def _group(path: SimPath, delta: float) -> int:
    g = delta / path.cfg.delta
    k = round(g)
    if k < 1 or abs(g - k) > 1e-9 * g:
        raise ConfigError(f"delta {delta} is not a multiple of the simulated scale {path.cfg.delta}")
    return k


def standardized_returns(path: SimPath, delta: float | None = None, mode: str = "exact") -> np.ndarray:
    """SLR at scale ``delta``: LR / sqrt(integrated variance), or LR / sqrt(V_h * delta) in spot mode.

    Intervals with zero variance are skipped.
    """
    delta = path.cfg.delta if delta is None else delta
    g = _group(path, delta)
    n = path.lr.size // g
    lr = path.lr[: n * g].reshape(n, g).sum(axis=1)
    if mode == "exact":
        var = path.integrated_variance[: n * g].reshape(n, g).sum(axis=1)
    elif mode == "spot":
        var = path.v_start[: n * g : g] * delta
    else:
        raise ConfigError(f"unknown standardization mode {mode!r}")
    ok = var > 0
    return lr[ok] / np.sqrt(var[ok])


# ---------------------------------------------------------------------------
# experiment


def parse_delta(value) -> float:
    """Accept floats or fraction strings such as ``"1/240"``."""
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return float(value)


@dataclass(frozen=True)
class ExperimentSpec:
    zs: tuple[float, ...] = (0.55, 3.0)
    deltas: tuple[float, ...] = (1 / 240, 1 / 48, 1 / 24)
    reps: int = 20
    seed: int = 2024
    epsilon: float = 1 / 14400
    horizon_T: float = 896.0
    rho: float = 0.0
    block_duration: int = 2
    window_k: int = 123
    var_level: float = 0.99
    estimator: MultiQuantileConfig = field(default_factory=MultiQuantileConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    gp_comparison: bool = True

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        for z in self.zs:
            HestonConfig(z=z, epsilon=self.epsilon, horizon_T=self.horizon_T, delta=min(self.deltas))


FULL_Z_GRID = (0.55, 1.0, 1.5, 3.0, 4.0, 5.0, 6.0, 7.0)
FULL_REPS = 600

ROW_FIELDS = ("z", "delta", "rep", "mEVI", "mu_bar", "sigma_bar", "var99", "sti", "ks_pass_rate", "mpi_max")
DETAIL_FIELDS = ("z", "delta", "rep", "obs_per_block", "blocks", "fits", "passing_fits",
                 "slr_count", "slr_ks_pvalue", "clamps", "error")


def rep_seed(seed: int, rep: int, z: float) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed + rep, int(round(z * 1_000_000))])


def var_comparison(
    slr: np.ndarray, block_size: int, k: int, cfg: MultiQuantileConfig | None = None,
    q: float = 0.99, n_exceedances: int | None = None,
) -> list[tuple[float, float]]:
    """GEV-VaR and GP-VaR on disjoint windows of ``k`` blocks.

    The GP fit uses the raw |SLR| of the same window with ``k`` exceedances by
    default, and is evaluated at the level ``q ** (1/m)`` equivalent to the
    block-maximum level ``q``.
    """
    from .estimators import multi_quantile_fit

    a = np.abs(np.asarray(slr, dtype=float))
    per = k * block_size
    out = []
    for w in range(a.size // per):
        raw = a[w * per : (w + 1) * per]
        try:
            fit = multi_quantile_fit(block_maxima(raw, block_size), cfg)
            g = float(gev_quantile(fit.params, q))
            p = gp_var(raw, q ** (1.0 / block_size), n_exceedances=n_exceedances or k)
        except GevRiskError as exc:
            log.info("window %d skipped in VaR comparison: %s", w, exc)
            continue
        out.append((g, p))
    return out


def _run_rep(spec: ExperimentSpec, z: float, rep: int):
    base = min(spec.deltas)
    hc = HestonConfig(z=z, epsilon=spec.epsilon, horizon_T=spec.horizon_T, delta=base,
                      rho=spec.rho, seed=rep_seed(spec.seed, rep, z))
    rows, details, pairs = [], [], {}
    try:
        path = simulate_path(hc)
    except GevRiskError as exc:
        log.warning("z=%s rep=%d: simulation failed: %s", z, rep, exc)
        for d in spec.deltas:
            details.append(dict(z=z, delta=d, rep=rep, error=str(exc)))
        return rows, details, pairs
    window = RollingWindow(spec.window_k, spec.block_duration)
    for d in spec.deltas:
        slr = standardized_returns(path, d)
        m = round(spec.block_duration / d)
        det = dict(z=z, delta=d, rep=rep, obs_per_block=m, clamps=path.clamps, slr_count=slr.size,
                   slr_ks_pvalue=float(stats.kstest(slr, "norm").pvalue), error="")
        if m < 20:
            warnings.warn(f"delta={d}: only {m} observations per block", RuntimeWarning)
        ys = block_maxima(slr, m)
        ms = maxima_from_array(ys, m, f"z{z}-d{d:.6g}-r{rep}", block_span_days=spec.block_duration)
        traj = fit_trajectory(rolling_samples(ms, window), spec.estimator, ms.symbol,
                              spec.gate, seed=spec.seed, var_level=spec.var_level)
        det.update(blocks=len(ms), fits=len(traj.records), passing_fits=len(traj.passing()))
        good = [r for r in traj.records if r.params is not None]
        passing = traj.passing()
        try:
            st = stability(traj, spec.window_k, spec.estimator)
        except GevRiskError as exc:
            det["error"] = str(exc)
            log.warning("z=%s delta=%s rep=%d excluded: %s", z, d, rep, exc)
            details.append(det)
            continue
        mu_bar = float(np.mean([r.params.mu for r in passing]))
        sigma_bar = float(np.mean([r.params.sigma for r in passing]))
        rows.append(dict(
            z=z, delta=d, rep=rep, mEVI=st.mEVI, mu_bar=mu_bar, sigma_bar=sigma_bar,
            var99=float(gev_quantile(GevParams(st.mEVI, mu_bar, sigma_bar), spec.var_level)),
            sti=st.sti,
            ks_pass_rate=float(np.mean([r.ks_pvalue > spec.gate.ks_threshold for r in good])),
            mpi_max=float(max(r.mpi for r in good)),
        ))
        details.append(det)
        if spec.gp_comparison:
            pairs[d] = var_comparison(slr, m, spec.window_k, spec.estimator, spec.var_level)
    return rows, details, pairs


def _run_task(args):
    return args[1], args[2], _run_rep(*args)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[dict]
    details: list[dict]
    var_pairs: dict[tuple[float, float], list[tuple[float, float]]]

    def cell(self, delta: float, z: float | None = None) -> list[dict]:
        return [r for r in self.rows if math.isclose(r["delta"], delta) and (z is None or r["z"] == z)]

    def summary(self) -> dict:
        """Per-delta aggregates over all z and reps, plus per-(z, delta) cells and a z t-test."""
        out = {}
        for d in self.spec.deltas:
            rs = self.cell(d)
            if not rs:
                continue
            agg = {}
            for key in ("mEVI", "mu_bar", "sigma_bar"):
                v = np.array([r[key] for r in rs])
                agg[key] = float(v.mean())
                agg[key + "_se"] = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
            agg["var99"] = float(gev_quantile(GevParams(agg["mEVI"], agg["mu_bar"], agg["sigma_bar"]),
                                              self.spec.var_level))
            agg["sti_above_0_8"] = float(np.mean([r["sti"] > 0.8 for r in rs]))
            agg["ks_pass_rate"] = float(np.mean([r["ks_pass_rate"] for r in rs]))
            agg["mpi_max"] = float(max(r["mpi_max"] for r in rs))
            agg["reps"] = len(rs)
            by_z = [np.array([r["mEVI"] for r in self.cell(d, z)]) for z in self.spec.zs]
            by_z = [b for b in by_z if b.size > 1]
            if len(by_z) == 2:
                agg["z_ttest_pvalue"] = float(stats.ttest_ind(*by_z).pvalue)
            elif len(by_z) > 2:
                agg["z_anova_pvalue"] = float(stats.f_oneway(*by_z).pvalue)
            out[f"{d:.10g}"] = agg
        return out


def heston_experiment(spec: ExperimentSpec = ExperimentSpec(), jobs: int = 1) -> ExperimentResult:
    """Simulate every (z, rep), derive all deltas from one path, fit rolling GEV models."""
    tasks = [(spec, z, rep) for z in spec.zs for rep in range(spec.reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    rows, details, pairs = [], [], {}
    for z, rep, (r, dt, p) in results:
        rows.extend(r)
        details.extend(dt)
        for d, lst in p.items():
            pairs.setdefault((z, d), []).extend(lst)
    return ExperimentResult(spec, rows, details, pairs)
