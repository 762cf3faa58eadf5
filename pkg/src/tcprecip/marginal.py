"""Marginal calibration: gamma target distribution, pooled ensemble ECDF,
the censored quantile transform and the verification taper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .core import InputError, NumericalError, gc_distance


@dataclass(frozen=True)
class GammaParams:
    shape: float
    rate: float

    def __post_init__(self):
        if not (np.isfinite(self.shape) and np.isfinite(self.rate) and self.shape > 0 and self.rate > 0):
            raise InputError(f"gamma parameters must be finite and positive, got {self.shape}, {self.rate}")

    def ppf(self, q):
        return stats.gamma.ppf(q, self.shape, scale=1.0 / self.rate)

    def cdf(self, x):
        return stats.gamma.cdf(x, self.shape, scale=1.0 / self.rate)

    def loglik(self, x):
        x = np.asarray(x, dtype=np.float64)
        a, b = self.shape, self.rate
        return float(np.sum(a * np.log(b) - special.gammaln(a) + (a - 1) * np.log(x) - b * x))


def fit_gamma(positives, tol=1e-10, max_iter=100):
    """Gamma MLE by Newton iteration on the shape equation
    ``log(a) - digamma(a) = log(mean) - mean(log)``; ``rate = a / mean``."""
    x = np.asarray(positives, dtype=np.float64).reshape(-1)
    if x.size < 2 or (x <= 0).any() or not np.isfinite(x).all():
        raise InputError("gamma fit needs at least two finite positive values")
    if np.ptp(x) == 0:
        raise NumericalError("gamma MLE is degenerate for identical values")
    mean = x.mean()
    s = np.log(mean) - np.log(x).mean()
    # Minka's starting value
    a = (3 - s + np.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
    for _ in range(max_iter):
        g = np.log(a) - special.digamma(a) - s
        if abs(g) < tol:
            break
        step = g / (1.0 / a - special.polygamma(1, a))
        a_new = a - step
        a = a_new if a_new > 0 else a / 2
    else:
        raise NumericalError("gamma shape iteration did not converge")
    return GammaParams(float(a), float(a / mean))


class Ecdf:
    """Mid-rank empirical CDF with an ``n + 1`` denominator.

    At a sample value with ranks ``i..j`` (1-based, ties grouped) the CDF is
    ``(i + j) / 2 / (n + 1)``; between distinct values it is linear, below the
    minimum it falls linearly to 0 at 0 and above the maximum it stays at the
    top value, so positive inputs always map into ``(0, 1)``.
    """

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
        if v.size == 0:
            raise InputError("no positive values to build an ECDF from (degenerate storm)")
        if (v <= 0).any():
            raise InputError("ECDF sample values must be positive")
        self.values = v
        self.n = v.size
        uniq, first, counts = np.unique(v, return_index=True, return_counts=True)
        mid = first + (counts + 1) / 2.0
        self._x = np.concatenate([[0.0], uniq])
        self._p = np.concatenate([[0.0], mid / (self.n + 1)])

    def __call__(self, x):
        return np.interp(x, self._x, self._p)


def build_ecdf(positives):
    return Ecdf(positives)


def anamorphose(Y, F, G):
    """Censored quantile transform: ``G^-1(F(Y))`` where ``Y > 0`` else 0."""
    Y = np.asarray(Y, dtype=np.float64)
    out = np.zeros_like(Y)
    pos = Y > 0
    if pos.any():
        out[pos] = G.ppf(F(Y[pos]))
    return out


def taper_weights(grid, center, rmax_km, alpha=4.0, beta=8.0):
    """Radial taper: 1 inside ``alpha * rmax``, a cos^2 ramp to 0 at
    ``beta * rmax``, 0 beyond."""
    if not rmax_km > 0:
        raise InputError(f"rmax must be > 0, got {rmax_km}")
    if not beta > alpha > 0:
        raise InputError(f"need beta > alpha > 0, got alpha={alpha}, beta={beta}")
    lon, lat = grid.mesh()
    r = gc_distance(np.stack([lon, lat], axis=-1), np.asarray(center, dtype=np.float64))
    return taper_profile(r, rmax_km, alpha, beta)


def taper_profile(r, rmax_km, alpha=4.0, beta=8.0):
    r = np.asarray(r, dtype=np.float64)
    a, b = alpha * rmax_km, beta * rmax_km
    ramp = np.cos(0.5 * np.pi * (r - a) / (b - a)) ** 2
    return np.where(r <= a, 1.0, np.where(r < b, ramp, 0.0))
