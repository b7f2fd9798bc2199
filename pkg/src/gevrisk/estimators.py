"""Quantile-based GEV estimators.

The shape ``xi`` is recovered from three empirical quantiles by inverting the
spacing ratio

    R(xi) = (exp(-xi L3) - exp(-xi L2)) / (exp(-xi L2) - exp(-xi L1)),
    L_i = log(-log q_i),

which is free of location and scale. Several such estimates are combined
with minimum-variance weights derived from the joint asymptotic law of
empirical quantiles (delta method), and location/scale are refit given the
combined shape.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateSampleError, NoConvergenceError, ParameterDomainError
from .gev import GevParams, gev_pdf, gev_quantile

XI_BRACKET = (-10.0, 10.0)
ROOT_TOL = 1e-10
MIN_SAMPLE = 30
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class QuantileTriple:
    q1: float
    q2: float
    q3: float

    def __post_init__(self) -> None:
        if not 0 < self.q1 < self.q2 < self.q3 < 1:
            raise ParameterDomainError(
                f"quantile triple must satisfy 0 < q1 < q2 < q3 < 1, got {self.levels}"
            )

    @property
    def levels(self) -> tuple[float, float, float]:
        return (self.q1, self.q2, self.q3)

    @property
    def ll(self) -> tuple[float, float, float]:
        return tuple(math.log(-math.log(q)) for q in self.levels)  # type: ignore[return-value]


CENTRAL_TRIPLE = QuantileTriple(0.25, 0.50, 0.75)

DEFAULT_TRIPLES = (
    QuantileTriple(0.10, 0.50, 0.90),
    QuantileTriple(0.15, 0.50, 0.85),
    QuantileTriple(0.20, 0.50, 0.80),
    CENTRAL_TRIPLE,
    QuantileTriple(0.30, 0.50, 0.70),
)


@dataclass(frozen=True)
class MultiQuantileConfig:
    """Triples to combine and how to weight them.

    ``refit_triple`` is used for location/scale once the shape is fixed; by
    default the central (0.25, 0.5, 0.75) triple when present, otherwise the
    middle entry of ``triples``.
    """

    triples: tuple[QuantileTriple, ...] = DEFAULT_TRIPLES
    weight_mode: str = "optimized"
    refit_triple: QuantileTriple | None = None

    def __post_init__(self) -> None:
        triples = tuple(
            t if isinstance(t, QuantileTriple) else QuantileTriple(*t) for t in self.triples
        )
        object.__setattr__(self, "triples", triples)
        if not triples:
            raise ParameterDomainError("at least one quantile triple is required")
        if len(set(triples)) != len(triples):
            raise ParameterDomainError("quantile triples must be distinct")
        if self.weight_mode not in ("optimized", "uniform"):
            raise ParameterDomainError(f"unknown weight mode {self.weight_mode!r}")
        if self.refit_triple is not None and not isinstance(self.refit_triple, QuantileTriple):
            object.__setattr__(self, "refit_triple", QuantileTriple(*self.refit_triple))

    @property
    def refit(self) -> QuantileTriple:
        if self.refit_triple is not None:
            return self.refit_triple
        if CENTRAL_TRIPLE in self.triples:
            return CENTRAL_TRIPLE
        return self.triples[len(self.triples) // 2]


@dataclass
class FitResult:
    params: GevParams
    weights: np.ndarray
    xi_variance: float
    sample_size: int
    triples: tuple[QuantileTriple, ...] = ()
    xi_components: np.ndarray = field(default_factory=lambda: np.empty(0))
    fallback_uniform: bool = False


# ---------------------------------------------------------------------------
# ratio function and its inverse


def _e(xi: float, a: float) -> float:
    """expm1(xi*a)/xi, continuous at xi = 0."""
    x = xi * a
    if abs(x) < 1e-10:
        return a * (1.0 + 0.5 * x)
    return math.expm1(x) / xi


def _dlog_e(xi: float, a: float) -> float:
    """d/dxi of log(expm1(xi*a)/xi)."""
    x = xi * a
    if abs(x) < 1e-4:
        return a * (0.5 + x / 12.0 - x**3 / 720.0)
    # x / (1 - exp(-x)) - 1, divided by xi
    return (x / -math.expm1(-x) - 1.0) / xi


def spacing_ratio(xi: float, ll: Sequence[float]) -> float:
    """R(xi) for a triple given as ``(L1, L2, L3)``; at 0 equals (L2-L3)/(L1-L2)."""
    l1, l2, l3 = ll
    return math.exp(-xi * (l2 - l1)) * _e(xi, l2 - l3) / _e(xi, l1 - l2)


def spacing_ratio_derivative(xi: float, ll: Sequence[float]) -> float:
    l1, l2, l3 = ll
    dlog = -(l2 - l1) + _dlog_e(xi, l2 - l3) - _dlog_e(xi, l1 - l2)
    return spacing_ratio(xi, ll) * dlog


def invert_ratio(ratio: float, ll: Sequence[float]) -> float:
    lo, hi = XI_BRACKET
    f = lambda x: math.log(spacing_ratio(x, ll)) - math.log(ratio)
    if not ratio > 0 or not math.isfinite(ratio):
        raise DegenerateSampleError(f"quantile spacing ratio must be positive, got {ratio}")
    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        raise NoConvergenceError(f"shape estimate outside [{lo}, {hi}] for ratio {ratio:.6g}")
    return brentq(f, lo, hi, xtol=ROOT_TOL, rtol=4 * np.finfo(float).eps)


# ---------------------------------------------------------------------------
# sample-based estimators


def empirical_quantile(sample, q):
    """Order-statistic quantile with linear interpolation at h = (n-1)q + 1."""
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ParameterDomainError("empirical quantile of an empty sample")
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ParameterDomainError("quantile level must lie in [0, 1]")
    out = np.quantile(x, q, method="linear")
    return float(out) if np.ndim(out) == 0 else out


def _xi_from_quantiles(qhat: Sequence[float], t: QuantileTriple) -> float:
    d1 = qhat[1] - qhat[0]
    d2 = qhat[2] - qhat[1]
    if d1 <= 0 or d2 <= 0:
        raise DegenerateSampleError(
            f"empirical quantiles not strictly increasing at {t.levels}: {tuple(qhat)}"
        )
    return invert_ratio(d2 / d1, t.ll)


def _sigma_mu_from_quantiles(qhat: Sequence[float], xi: float, t: QuantileTriple):
    l1, l2, _ = t.ll
    # Q2 - Q1 = sigma * exp(-xi L1) * expm1(xi (L1 - L2)) / xi
    sigma = (qhat[1] - qhat[0]) / (math.exp(-xi * l1) * _e(xi, l1 - l2))
    if not sigma > 0:
        raise DegenerateSampleError(f"non-positive scale estimate {sigma}")
    mu = qhat[1] - sigma * _e(xi, -l2)
    return sigma, mu


def _check_size(x: np.ndarray) -> None:
    if x.size < MIN_SAMPLE:
        raise ParameterDomainError(f"need at least {MIN_SAMPLE} observations, got {x.size}")


def three_quantile_xi(sample, t: QuantileTriple) -> float:
    x = np.asarray(sample, dtype=float)
    _check_size(x)
    return _xi_from_quantiles(np.quantile(x, t.levels), t)


def fit_sigma_mu(sample, xi: float, t: QuantileTriple = CENTRAL_TRIPLE) -> tuple[float, float]:
    x = np.asarray(sample, dtype=float)
    return _sigma_mu_from_quantiles(np.quantile(x, t.levels), xi, t)


# ---------------------------------------------------------------------------
# asymptotic covariance


def _levels_index(triples: Sequence[QuantileTriple]):
    levels = sorted({q for t in triples for q in t.levels})
    pos = {q: i for i, q in enumerate(levels)}
    return np.array(levels), [[pos[q] for q in t.levels] for t in triples]


def xi_covariance(xi: float, triples: Sequence[QuantileTriple]) -> np.ndarray:
    """Asymptotic covariance of sqrt(n) * (xi_hat_1, ..., xi_hat_p) at shape ``xi``.

    Built from the joint normal limit of empirical quantiles,
    Cov = (min(qa, qb) - qa qb) / (g(Qa) g(Qb)), pushed through the gradient
    of each ratio-inversion estimator. Location and scale cancel, so the
    standard (mu=0, sigma=1) law is used.
    """
    levels, idx = _levels_index(triples)
    unit = GevParams(xi, 0.0, 1.0)
    qv = np.asarray(gev_quantile(unit, levels))
    dens = np.asarray(gev_pdf(unit, qv))
    qa, qb = np.meshgrid(levels, levels, indexing="ij")
    cov_q = (np.minimum(qa, qb) - qa * qb) / np.outer(dens, dens)

    jac = np.zeros((len(triples), len(levels)))
    for j, (t, ix) in enumerate(zip(triples, idx)):
        q1, q2, q3 = qv[ix]
        d1, d2 = q2 - q1, q3 - q2
        dr = np.array([d2 / d1**2, -1.0 / d1 - d2 / d1**2, 1.0 / d1])
        dxi_dr = 1.0 / spacing_ratio_derivative(xi, t.ll)
        jac[j, ix] = dxi_dr * dr
    return jac @ cov_q @ jac.T


def _weights(cov: np.ndarray, mode: str) -> tuple[np.ndarray, bool]:
    p = cov.shape[0]
    uniform = np.full(p, 1.0 / p)
    if mode == "uniform" or p == 1:
        return uniform, False
    if not np.all(np.isfinite(cov)) or np.linalg.cond(cov) > MAX_CONDITION:
        return uniform, True
    a = np.linalg.solve(cov, np.ones(p))
    w = a / a.sum()
    return w, False


def xi_asymptotic_variance(xi: float, cfg: MultiQuantileConfig | None = None) -> float:
    """Asymptotic variance of sqrt(n) * (xi_hat - xi) for the weighted estimator."""
    cfg = cfg or MultiQuantileConfig()
    cov = xi_covariance(xi, cfg.triples)
    w, _ = _weights(cov, cfg.weight_mode)
    return float(w @ cov @ w)


# ---------------------------------------------------------------------------
# combined fit


def multi_quantile_fit(sample, cfg: MultiQuantileConfig | None = None) -> FitResult:
    """Weighted multi-triple fit of (xi, mu, sigma).

    Triples whose ratio inversion fails are dropped. Weights come from the
    covariance evaluated once at the uniform-weight pilot estimate.
    """
    cfg = cfg or MultiQuantileConfig()
    x = np.asarray(sample, dtype=float)
    _check_size(x)
    refit = cfg.refit
    all_triples = cfg.triples
    levels, idx = _levels_index(all_triples + (refit,))
    qhat = np.quantile(x, levels)

    kept: list[QuantileTriple] = []
    xis: list[float] = []
    last_err: Exception | None = None
    for t, ix in zip(all_triples, idx):
        try:
            xis.append(_xi_from_quantiles(qhat[ix], t))
            kept.append(t)
        except (DegenerateSampleError, NoConvergenceError) as exc:
            last_err = exc
    if not kept:
        assert last_err is not None
        raise last_err

    xi_j = np.array(xis)
    pilot = float(xi_j.mean())
    cov = xi_covariance(pilot, kept)
    w, fell_back = _weights(cov, cfg.weight_mode)
    if fell_back:
        warnings.warn("ill-conditioned estimator covariance; using uniform weights", RuntimeWarning)
    xi_hat = float(w @ xi_j)
    sigma, mu = _sigma_mu_from_quantiles(qhat[idx[-1]], xi_hat, refit)
    return FitResult(
        params=GevParams(xi_hat, mu, sigma),
        weights=w,
        xi_variance=float(max(w @ cov @ w, 0.0)),
        sample_size=int(x.size),
        triples=tuple(kept),
        xi_components=xi_j,
        fallback_uniform=fell_back,
    )
