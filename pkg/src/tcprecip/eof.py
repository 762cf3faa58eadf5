"""Empirical orthogonal functions of stacked polar fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import InputError, NumericalError, PolarField, PolarGridSpec


@dataclass(frozen=True, eq=False)
class EofBasis:
    """Leading EOFs on a polar grid.

    ``patterns`` is ``(L, K)`` with r-major flattening. ``mean`` is the row
    mean removed before the SVD (``None`` for the raw, uncentred SVD).
    ``all_singular_values`` keeps the full spectrum for variance accounting.
    """

    spec: PolarGridSpec
    patterns: np.ndarray
    singular_values: np.ndarray
    total_variance: float
    all_singular_values: np.ndarray
    mean: Optional[np.ndarray] = None

    @property
    def L(self):
        return self.patterns.shape[0]

    def variance_explained(self, L=None):
        L = self.L if L is None else L
        if self.total_variance == 0:
            return 1.0
        return float(np.sum(self.all_singular_values[:L] ** 2) / self.total_variance)


def _as_matrix_column(pf, spec):
    if isinstance(pf, PolarField):
        if pf.spec != spec:
            raise InputError("polar fields do not share one grid spec")
        return pf.flatten()
    a = np.asarray(pf, dtype=np.float64)
    if a.shape not in ((spec.n_r, spec.n_theta), (spec.size,)):
        raise InputError(f"polar array shape {a.shape} does not match {spec}")
    return a.reshape(-1)


def assemble_matrix(events, spec=PolarGridSpec()):
    """Stack every hour of every event as a column of a ``K x T`` matrix.

    ``events`` is a list of per-event sequences of PolarFields (or arrays).
    Columns run over events in order, then hours.
    """
    cols = [_as_matrix_column(pf, spec) for ev in events for pf in ev]
    if not cols:
        raise InputError("no fields to assemble")
    return np.column_stack(cols)


def unflatten(column, spec=PolarGridSpec()):
    return PolarField(spec, np.asarray(column).reshape(spec.n_r, spec.n_theta))


def compute_eofs(P, L, spec=PolarGridSpec(), center=False):
    """Thin SVD of ``P``; returns ``(basis, pcs)`` with ``pcs`` shaped ``(L, T)``.

    Each pattern is signed so its largest-magnitude entry is positive.
    """
    P = np.asarray(P, dtype=np.float64)
    K, T = P.shape
    if not 1 <= L <= min(K, T):
        raise InputError(f"L must be in [1, {min(K, T)}], got {L}")
    mean = P.mean(axis=1) if center else None
    X = P - mean[:, None] if center else P
    try:
        U, d, Vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from None
    U = U[:, :L].T.copy()
    Vt = Vt[:L]
    flip = np.sign(U[np.arange(L), np.argmax(np.abs(U), axis=1)])
    flip[flip == 0] = 1.0
    U *= flip[:, None]
    Vt = Vt * flip[:, None]
    pcs = d[:L, None] * Vt
    basis = EofBasis(spec, U, d[:L].copy(), float(np.sum(X * X)), d.copy(), mean)
    return basis, pcs


def project(pf, basis):
    """EOF coefficients of a polar field (or flattened array)."""
    x = _as_matrix_column(pf, basis.spec)
    if basis.mean is not None:
        x = x - basis.mean
    return basis.patterns @ x


def reconstruct(basis, coeffs):
    """Polar field ``sum_l coeffs[l] * pattern_l`` (plus the mean if centred)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (basis.L,):
        raise InputError(f"expected {basis.L} coefficients, got shape {coeffs.shape}")
    x = coeffs @ basis.patterns
    if basis.mean is not None:
        x = x + basis.mean
    return unflatten(x, basis.spec)


def reconstruct_many(basis, coeffs):
    """Vectorised reconstruction: ``coeffs`` ``(L, T)`` -> flattened ``(T, K)``."""
    x = np.asarray(coeffs).T @ basis.patterns
    if basis.mean is not None:
        x = x + basis.mean
    return x
