"""GEV, generalized Pareto and normal distribution primitives.

All functions accept scalars or numpy arrays and are valid for every real
shape parameter, including the Gumbel limit ``xi == 0``.

Random draws use numpy's PCG64 bit generator (``np.random.default_rng``),
seeded explicitly by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import ParameterDomainError

#: Below this magnitude of ``xi`` the Gumbel formulas are used.
XI_BRANCH_TOL = 1e-8

_U_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class GevParams:
    """Shape ``xi``, location ``mu`` and scale ``sigma`` of a GEV law."""

    xi: float
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        vals = (self.xi, self.mu, self.sigma)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterDomainError(f"GEV parameters must be finite, got {vals}")
        if self.sigma <= 0:
            raise ParameterDomainError(f"GEV scale must be positive, got {self.sigma}")

    def upper_endpoint(self) -> float:
        return self.mu - self.sigma / self.xi if self.xi < -XI_BRANCH_TOL else math.inf

    def lower_endpoint(self) -> float:
        return self.mu - self.sigma / self.xi if self.xi > XI_BRANCH_TOL else -math.inf


@dataclass(frozen=True)
class GpParams:
    """Generalized Pareto tail above threshold ``u``.

    ``zeta_u`` is the fraction of observations exceeding ``u``.
    """

    xi: float
    beta: float
    u: float
    zeta_u: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.xi, self.beta, self.u, self.zeta_u)):
            raise ParameterDomainError("GP parameters must be finite")
        if self.beta <= 0:
            raise ParameterDomainError(f"GP scale must be positive, got {self.beta}")
        if not 0 < self.zeta_u <= 1:
            raise ParameterDomainError(f"exceedance fraction must lie in (0, 1], got {self.zeta_u}")


def _out(x: np.ndarray):
    return float(x) if x.ndim == 0 else x


def expm1_ratio(xi, a):
    """``expm1(xi * a) / xi`` with its limit ``a`` at ``xi == 0``."""
    xi = np.asarray(xi, dtype=float)
    a = np.asarray(a, dtype=float)
    small = np.abs(xi) < XI_BRANCH_TOL
    safe = np.where(small, 1.0, xi)
    return _out(np.where(small, a * (1 + 0.5 * xi * a), np.expm1(safe * a) / safe))


def log_neg_log(q):
    """``log(-log(q))``, the transform that linearizes GEV quantiles."""
    return np.log(-np.log(q))


def gev_quantile(p: GevParams, q):
    """Quantile function ``mu + sigma * (exp(-xi * LL) - 1) / xi``, ``LL = log(-log q)``."""
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)) or np.any(np.isnan(q)):
        raise ParameterDomainError("quantile level must lie strictly inside (0, 1)")
    ll = log_neg_log(q)
    return _out(np.asarray(p.mu + p.sigma * expm1_ratio(p.xi, -ll)))


def _reduced(p: GevParams, y):
    """Return ``(t, inside)`` with ``G(y) = exp(-t)`` on the support."""
    z = (np.asarray(y, dtype=float) - p.mu) / p.sigma
    if abs(p.xi) < XI_BRANCH_TOL:
        return np.exp(-z), np.ones(z.shape, dtype=bool)
    arg = p.xi * z
    inside = arg > -1.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = np.exp(-np.log1p(np.where(inside, arg, 0.0)) / p.xi)
    return t, inside


def gev_cdf(p: GevParams, y):
    """Distribution function; returns the limiting 0/1 value outside the support."""
    t, inside = _reduced(p, y)
    outside_val = 0.0 if p.xi > 0 else 1.0
    with np.errstate(over="ignore"):
        g = np.where(inside, np.exp(-t), outside_val)
    return _out(np.asarray(g))


def gev_pdf(p: GevParams, y):
    t, inside = _reduced(p, y)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        # density = t^(1 + xi) * exp(-t) / sigma
        dens = np.exp((1.0 + p.xi) * np.log(t) - t) / p.sigma
    dens = np.where(inside & np.isfinite(dens), dens, 0.0)
    return _out(np.asarray(dens))


def gev_sample(p: GevParams, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. GEV draws by inverse transform of PCG64 uniforms.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if n < 1:
        raise ParameterDomainError(f"sample size must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(n)
    u = np.clip(u, _U_TINY, 1.0 - np.finfo(float).epsneg)
    return np.asarray(gev_quantile(p, u))


def gp_quantile(p: GpParams, q):
    """Level-``q`` quantile of the full distribution implied by a GP tail fit.

    ``u + beta/xi * (((1 - q)/zeta_u)^(-xi) - 1)``, valid for ``q >= 1 - zeta_u``.
    """
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ParameterDomainError("quantile level must lie strictly inside (0, 1)")
    # (ratio)^(-xi) - 1 == expm1(-xi * log(ratio))
    log_ratio = np.log((1.0 - q) / p.zeta_u)
    return _out(np.asarray(p.u + p.beta * expm1_ratio(p.xi, -log_ratio)))


def normal_quantile(q: float, mean: float = 0.0, std: float = 1.0) -> float:
    if not 0 < q < 1:
        raise ParameterDomainError("quantile level must lie strictly inside (0, 1)")
    if std <= 0:
        raise ParameterDomainError(f"normal std must be positive, got {std}")
    return NormalDist(mean, std).inv_cdf(q)


def normal_cdf(x, mean: float = 0.0, std: float = 1.0):
    from scipy.special import ndtr

    return _out(np.asarray(ndtr((np.asarray(x, dtype=float) - mean) / std)))
