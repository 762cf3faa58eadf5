"""Residual process on the polar grid: per-band harmonic regression in theta,
nonparametric radial covariances per harmonic component, and a shared AR(1)
coefficient for the temporal dynamics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ar1 import PHI_BOUND, fit_ar1_batch
from .core import InputError, NumericalError, PolarGridSpec
from .eof import reconstruct_many
from .regrid import bilinear_stencil


@dataclass(frozen=True, eq=False)
class HarmonicCoeffs:
    """``d0`` is ``(n_r, T)``; ``d1``/``d2`` (cosine/sine) are ``(M, n_r, T)``."""

    d0: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    @property
    def M(self):
        return self.d1.shape[0]

    @property
    def T(self):
        return self.d0.shape[1]

    def component_rows(self):
        """All ``(component, band)`` series as rows of a ``(n, T)`` array."""
        return np.concatenate([self.d0, self.d1.reshape(-1, self.T), self.d2.reshape(-1, self.T)])


@dataclass(frozen=True, eq=False)
class ResidualModel:
    """Radial second-moment matrices per harmonic component.

    ``cov1[m - 1]``/``cov2[m - 1]`` belong to ``cos(m theta)``/``sin(m theta)``;
    ``jitter`` holds the diagonal loading (``1 + 2M`` entries, same order as
    :meth:`stacked`) that made each matrix Cholesky-factorisable.
    """

    spec: PolarGridSpec
    cov0: np.ndarray
    cov1: np.ndarray
    cov2: np.ndarray
    phi_bar: float
    jitter: np.ndarray

    @property
    def M(self):
        return self.cov1.shape[0]

    def stacked(self):
        return np.concatenate([self.cov0[None], self.cov1, self.cov2])

    def node_variance(self):
        """Marginal variance of ``U`` at each polar node ``(n_r, n_theta)``."""
        cos, sin = _trig(self.spec.thetas, self.M)
        v = np.diagonal(self.cov0)[:, None] * np.ones(self.spec.n_theta)
        v = v + np.einsum("mk,mj->kj", np.diagonal(self.cov1, axis1=1, axis2=2), cos ** 2)
        v = v + np.einsum("mk,mj->kj", np.diagonal(self.cov2, axis1=1, axis2=2), sin ** 2)
        return v


def _trig(thetas, M):
    m = np.arange(1, M + 1)[:, None]
    return np.cos(m * thetas), np.sin(m * thetas)


def harmonic_design(thetas, M):
    """Regression design ``[1, cos(m theta), ..., sin(m theta), ...]``."""
    cos, sin = _trig(np.asarray(thetas, dtype=np.float64), M)
    return np.column_stack([np.ones(len(thetas)), cos.T, sin.T])


def residual_fields(Y, basis, mu_hat):
    """``Y - sum_l mu_hat[l] * pattern_l`` for polar stacks ``(T, n_r, n_theta)``."""
    Y = np.asarray(Y, dtype=np.float64)
    T = Y.shape[0]
    mu_hat = np.asarray(mu_hat, dtype=np.float64)
    if mu_hat.shape != (basis.L, T):
        raise InputError(f"mu_hat shape {mu_hat.shape} != ({basis.L}, {T})")
    trend = reconstruct_many(basis, mu_hat).reshape(Y.shape)
    return Y - trend


def fit_harmonics(band, M, thetas=None):
    """Least-squares harmonic fit of values over a full uniform theta grid.

    ``band`` may be ``(n_theta,)`` or ``(..., n_theta)``. Returns
    ``(d0, d1, d2)`` where ``d1``/``d2`` carry a leading axis of length
    ``M``. On a uniform grid the normal equations are diagonal, so the
    coefficients are scaled discrete Fourier sums.
    """
    band = np.asarray(band, dtype=np.float64)
    n = band.shape[-1]
    if 2 * M + 1 > n:
        raise InputError(f"2M + 1 = {2 * M + 1} exceeds the {n} angular samples")
    if thetas is None:
        thetas = PolarGridSpec(n_theta=n).thetas
    cos, sin = _trig(np.asarray(thetas, dtype=np.float64), M)
    d0 = band.mean(axis=-1)
    d1 = np.moveaxis(band @ cos.T, -1, 0) * (2.0 / n)
    d2 = np.moveaxis(band @ sin.T, -1, 0) * (2.0 / n)
    return d0, d1, d2


def fit_harmonics_stack(U, M, spec=PolarGridSpec()):
    """Harmonic coefficients for every band and hour of ``U`` ``(T, n_r, n_theta)``."""
    d0, d1, d2 = fit_harmonics(np.asarray(U), M, spec.thetas)
    # (T, n_r) -> (n_r, T); (M, T, n_r) -> (M, n_r, T)
    return HarmonicCoeffs(d0.T.copy(), np.swapaxes(d1, 1, 2).copy(), np.swapaxes(d2, 1, 2).copy())


def evaluate_harmonics(d0, d1, d2, thetas):
    """Harmonic sum at ``thetas``: ``d0`` ``(..., n_r)``, ``d1``/``d2`` ``(..., M, n_r)``."""
    cos, sin = _trig(np.asarray(thetas, dtype=np.float64), d1.shape[-2])
    return (np.asarray(d0)[..., None] + np.einsum("...mk,mj->...kj", d1, cos)
            + np.einsum("...mk,mj->...kj", d2, sin))


def _jittered_cholesky(C):
    n = C.shape[0]
    tr = float(np.trace(C))
    if tr <= 0:
        return np.zeros_like(C), 0.0
    base = tr / n
    for jit in [0.0] + [base * 10.0 ** e for e in range(-10, -3)]:
        try:
            return np.linalg.cholesky(C + jit * np.eye(n)), jit
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("covariance matrix not positive definite after maximum jitter")


def second_moment(D):
    """Uncentred empirical second moment ``T^-1 sum_t d(t) d(t)^T`` of ``(n, T)``."""
    D = np.asarray(D, dtype=np.float64)
    return D @ D.T / D.shape[1]


def estimate_residual_model(coeffs, breaks=(0,), spec=PolarGridSpec()):
    """Radial covariance per harmonic component plus the pooled AR(1)
    coefficient over every ``(component, band)`` series.

    ``breaks`` are the start indices of each event within the time axis.
    """
    T = coeffs.T
    if T < 2:
        raise InputError("need at least two hours of coefficients")
    cov0 = second_moment(coeffs.d0)
    cov1 = np.stack([second_moment(d) for d in coeffs.d1])
    cov2 = np.stack([second_moment(d) for d in coeffs.d2])
    jitter = np.array([_jittered_cholesky(C)[1] for C in np.concatenate([cov0[None], cov1, cov2])])
    phis, valid = fit_ar1_batch(coeffs.component_rows(), breaks)
    if not valid.any():
        raise NumericalError("all harmonic coefficient series are constant")
    phi_bar = float(np.clip(phis[valid].mean(), -PHI_BOUND, PHI_BOUND))
    return ResidualModel(spec, cov0, cov1, cov2, phi_bar, jitter)


@dataclass(frozen=True, eq=False)
class SimulatedZ:
    """Simulated residual on the polar grid, ``values`` ``(T, n_r, n_theta)``.

    Calling it evaluates the field at arbitrary ``(r, theta)`` by bilinear
    interpolation (0 beyond the outer radius).
    """

    spec: PolarGridSpec
    values: np.ndarray

    def __call__(self, t, r_km, theta):
        r_b, t_b = np.broadcast_arrays(np.asarray(r_km, dtype=np.float64), np.asarray(theta, dtype=np.float64))
        idx, w = bilinear_stencil(self.spec, r_b, t_b)
        out = np.einsum("nk,nk->n", w, self.values[t].reshape(-1)[idx]).reshape(r_b.shape)
        return float(out) if out.ndim == 0 else out


def simulate_coefficients(model, T_sim, seed=None):
    """Scaled VAR(1) draws for every component: ``(T_sim, 1 + 2M, n_r)``.

    ``x_0 = L z_0``; ``x_t = phi x_{t-1} + sqrt(1 - phi^2) L z_t`` with
    ``L L^T`` the (jittered) component covariance, so the marginal
    covariance is stationary.
    """
    covs = model.stacked()
    n = covs.shape[1]
    chols = np.stack([np.linalg.cholesky(C + j * np.eye(n)) if j > 0 or np.trace(C) > 0 else np.zeros_like(C)
                      for C, j in zip(covs, model.jitter)])
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((T_sim, covs.shape[0], n))
    e = np.einsum("cij,tcj->tci", chols, z)
    phi = model.phi_bar
    scale = np.sqrt(1.0 - phi * phi)
    x = np.empty_like(e)
    x[0] = e[0]
    for t in range(1, T_sim):
        x[t] = phi * x[t - 1] + scale * e[t]
    return x


def simulate_Z(model, T_sim, seed=None):
    """Simulate the residual field for ``T_sim`` hours on the polar grid."""
    M = model.M
    x = simulate_coefficients(model, T_sim, seed)
    U = evaluate_harmonics(x[:, 0], x[:, 1:1 + M], x[:, 1 + M:], model.spec.thetas)
    return SimulatedZ(model.spec, U)
