"""Zero-mean Gaussian AR(1): exact maximum likelihood and simulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InputError, NumericalError

PHI_BOUND = 0.999
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Ar1Params:
    phi: float
    sigma2: float

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise InputError(f"|phi| must be < 1, got {self.phi}")
        if self.sigma2 < 0:
            raise InputError(f"sigma2 must be >= 0, got {self.sigma2}")

    @property
    def stationary_variance(self):
        return self.sigma2 / (1.0 - self.phi ** 2)


def _segments(series):
    if isinstance(series, np.ndarray) and series.ndim == 1:
        return [series.astype(np.float64)]
    return [np.asarray(s, dtype=np.float64).reshape(-1) for s in series if len(s) > 0]


def _sufficient_stats(segs):
    """Coefficients of ``S(phi) = a + b phi + c phi^2`` and counts.

    ``S`` is the stationary sum of squares: ``(1 - phi^2) x_0^2`` plus the
    conditional squared innovations of every segment.
    """
    a = b = c = 0.0
    n = 0
    for x in segs:
        x0 = x[0]
        a += x0 * x0 + np.dot(x[1:], x[1:])
        b += -2.0 * np.dot(x[1:], x[:-1])
        c += np.dot(x[:-1], x[:-1]) - x0 * x0
        n += x.size
    return a, b, c, n, len(segs)


def profile_loglik(phi, series):
    """Exact log-likelihood maximised over the innovation variance."""
    a, b, c, n, k = _sufficient_stats(_segments(series))
    return _profile(np.asarray(phi, dtype=np.float64), a, b, c, n, k)


def _profile(phi, a, b, c, n, k):
    s = np.maximum(a + b * phi + c * phi * phi, 1e-300)
    return -0.5 * n * (np.log(2 * np.pi * s / n) + 1.0) + 0.5 * k * np.log1p(-phi * phi)


def loglik(params, series):
    a, b, c, n, k = _sufficient_stats(_segments(series))
    phi, s2 = params.phi, params.sigma2
    s = a + b * phi + c * phi * phi
    return -0.5 * n * np.log(2 * np.pi * s2) + 0.5 * k * np.log1p(-phi * phi) - s / (2 * s2)


def _golden_max(f, lo, hi, tol=1e-10):
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = f(x1)
    return 0.5 * (lo + hi)


def fit_ar1(series):
    """MLE of ``(phi, sigma2)`` from one series or a list of independent
    segments (one per event).

    The profile likelihood is bracketed on a coarse grid, then refined by
    golden-section search inside ``(-0.999, 0.999)``.
    """
    segs = _segments(series)
    a, b, c, n, k = _sufficient_stats(segs)
    if n < 3:
        raise InputError(f"AR(1) fit needs at least 3 observations, got {n}")
    if np.ptp(np.concatenate(segs)) == 0:
        raise NumericalError("degenerate (zero-variance) series")

    def f(phi):
        return _profile(phi, a, b, c, n, k)

    grid = np.linspace(-PHI_BOUND, PHI_BOUND, 41)
    j = int(np.argmax(f(grid)))
    lo = grid[max(j - 1, 0)]
    hi = grid[min(j + 1, grid.size - 1)]
    phi = float(np.clip(_golden_max(f, lo, hi), -PHI_BOUND, PHI_BOUND))
    sigma2 = (a + b * phi + c * phi * phi) / n
    if not sigma2 > 0:
        raise NumericalError("degenerate (zero-variance) series")
    return Ar1Params(phi, float(sigma2))


def simulate_ar1(params, n, seed=None):
    """Stationary AR(1) path of length ``n``; ``seed`` is anything
    ``numpy.random.default_rng`` accepts."""
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    x = np.empty(n)
    sd = np.sqrt(params.sigma2)
    x[0] = np.sqrt(params.stationary_variance) * z[0]
    for t in range(1, n):
        x[t] = params.phi * x[t - 1] + sd * z[t]
    return x


def pool_ar_coefficient(series_set):
    """Average of per-series MLE ``phi``; degenerate series are skipped.

    Each element of ``series_set`` is a series or a list of event segments.
    """
    phis = []
    for s in series_set:
        try:
            phis.append(fit_ar1(s).phi)
        except NumericalError:
            continue
    if not phis:
        raise NumericalError("no non-degenerate series to pool")
    return float(np.clip(np.mean(phis), -PHI_BOUND, PHI_BOUND))


def fit_ar1_batch(x, breaks):
    """Per-row MLE ``phi`` for a ``(n_series, T)`` array sharing event
    breakpoints ``breaks`` (segment start indices, first entry 0).

    Returns ``(phi, valid)``; constant rows are marked invalid.
    """
    x = np.asarray(x, dtype=np.float64)
    bounds = list(breaks) + [x.shape[1]]
    a = np.zeros(x.shape[0])
    b = np.zeros_like(a)
    c = np.zeros_like(a)
    for s, e in zip(bounds[:-1], bounds[1:]):
        seg = x[:, s:e]
        a += seg[:, 0] ** 2 + np.sum(seg[:, 1:] ** 2, axis=1)
        b += -2.0 * np.sum(seg[:, 1:] * seg[:, :-1], axis=1)
        c += np.sum(seg[:, :-1] ** 2, axis=1) - seg[:, 0] ** 2
    n, k = x.shape[1], len(bounds) - 1
    valid = np.ptp(x, axis=1) > 0
    phi = np.zeros(x.shape[0])
    grid = np.linspace(-PHI_BOUND, PHI_BOUND, 41)
    for i in np.flatnonzero(valid):
        f = lambda p, i=i: _profile(p, a[i], b[i], c[i], n, k)
        j = int(np.argmax(f(grid)))
        phi[i] = _golden_max(f, grid[max(j - 1, 0)], grid[min(j + 1, 40)])
    return np.clip(phi, -PHI_BOUND, PHI_BOUND), valid
