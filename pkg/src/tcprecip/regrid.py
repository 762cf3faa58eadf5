"""Resampling between the native lon-lat grid and the storm-centred polar grid.

Native fields are kriged onto the polar grid with local ordinary kriging
(exponential covariance) in a chart where the radius is rescaled to
``[0, 10]``. Polar surfaces go back to the native grid by bilinear
interpolation in ``(r, theta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .core import InputError, NumericalError, PolarField, PolarGridSpec, to_storm_polar

JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class KrigeConfig:
    """Local ordinary-kriging settings.

    ``nugget`` is a fraction of the sill (the covariance is
    ``exp(-d / range_scaled)`` with unit sill), so the default equals a nugget
    of ``1e-6`` times the field variance.
    """

    range_scaled: float = 2.0
    nugget: float = 1e-6
    n_neighbors: int = 16
    radius_scale: float = 10.0

    def __post_init__(self):
        if self.n_neighbors < 4:
            raise InputError(f"n_neighbors must be >= 4, got {self.n_neighbors}")
        if not self.range_scaled > 0:
            raise InputError(f"range_scaled must be > 0, got {self.range_scaled}")
        if self.nugget < 0:
            raise InputError(f"nugget must be >= 0, got {self.nugget}")


def _chart(r_km, theta, spec, cfg):
    rs = np.asarray(r_km) * (cfg.radius_scale / spec.r_max_km)
    return np.stack([rs * np.cos(theta), rs * np.sin(theta)], axis=-1)


def _polar_nodes(spec):
    rr, tt = np.meshgrid(spec.radii, spec.thetas, indexing="ij")
    return rr.reshape(-1), tt.reshape(-1)


def krige_weights(src_xy, query_xy, cfg):
    """Ordinary-kriging weights of each query point on its nearest sources.

    Returns ``(idx, w)``, both shaped ``(n_query, n_neighbors)``.
    """
    k = cfg.n_neighbors
    if src_xy.shape[0] < k:
        raise InputError(f"need at least {k} source points, have {src_xy.shape[0]}")
    tree = cKDTree(src_xy)
    _, idx = tree.query(query_xy, k=k)
    w, ok = _ok_weights(np.ascontiguousarray(src_xy, dtype=np.float64),
                        np.ascontiguousarray(query_xy, dtype=np.float64),
                        idx.astype(np.int64), float(cfg.range_scaled), float(cfg.nugget))
    for i in np.flatnonzero(~ok):
        A, rhs = _system(src_xy[idx[i]], query_xy[i], cfg)
        w[i] = _solve_jittered(A, rhs, k, i)[:k]
    return idx, w


def _system(pts, q, cfg):
    k = pts.shape[0]
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = np.exp(-np.linalg.norm(pts[:, None] - pts[None], axis=-1) / cfg.range_scaled)
    A[:k, :k] += cfg.nugget * np.eye(k)
    A[:k, k] = A[k, :k] = 1.0
    rhs = np.ones(k + 1)
    rhs[:k] = np.exp(-np.linalg.norm(pts - q, axis=-1) / cfg.range_scaled)
    return A, rhs


@njit(cache=True, nogil=True)
def _ok_weights(src, query, idx, rng, nugget):
    # Gaussian elimination with partial pivoting on each bordered system;
    # rows that come out singular or non-finite are flagged for the
    # jittered fallback
    n, k = idx.shape
    m = k + 1
    w = np.zeros((n, k))
    ok = np.ones(n, dtype=np.bool_)
    A = np.empty((m, m))
    b = np.empty(m)
    for q in range(n):
        for i in range(k):
            xi = src[idx[q, i], 0]
            yi = src[idx[q, i], 1]
            for j in range(i, k):
                dx = xi - src[idx[q, j], 0]
                dy = yi - src[idx[q, j], 1]
                c = np.exp(-np.sqrt(dx * dx + dy * dy) / rng)
                A[i, j] = c
                A[j, i] = c
            A[i, i] += nugget
            A[i, k] = 1.0
            A[k, i] = 1.0
            dx = xi - query[q, 0]
            dy = yi - query[q, 1]
            b[i] = np.exp(-np.sqrt(dx * dx + dy * dy) / rng)
        A[k, k] = 0.0
        b[k] = 1.0
        good = True
        for c in range(m):
            p = c
            best = abs(A[c, c])
            for r in range(c + 1, m):
                if abs(A[r, c]) > best:
                    best = abs(A[r, c])
                    p = r
            if best < 1e-300:
                good = False
                break
            if p != c:
                for j in range(m):
                    t = A[c, j]
                    A[c, j] = A[p, j]
                    A[p, j] = t
                t = b[c]
                b[c] = b[p]
                b[p] = t
            for r in range(c + 1, m):
                f = A[r, c] / A[c, c]
                if f != 0.0:
                    for j in range(c, m):
                        A[r, j] -= f * A[c, j]
                    b[r] -= f * b[c]
        if good:
            for c in range(m - 1, -1, -1):
                s = b[c]
                for j in range(c + 1, m):
                    s -= A[c, j] * b[j]
                b[c] = s / A[c, c]
            for i in range(k):
                if not np.isfinite(b[i]):
                    good = False
                w[q, i] = b[i]
        ok[q] = good
    return w, ok


def _solve_jittered(A, b, k, node):
    for jit in JITTERS:
        Aj = A.copy()
        Aj[:k, :k] += jit * np.eye(k)
        try:
            x = np.linalg.solve(Aj, b)
        except np.linalg.LinAlgError:
            continue
        if np.isfinite(x).all():
            return x
    raise NumericalError(f"singular kriging system at polar node {node}")


def euclid_to_polar(field, grid, center, cfg=KrigeConfig(), spec=PolarGridSpec()):
    """Krige a native-grid field onto the polar grid about ``center``."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape != grid.shape:
        raise InputError(f"field shape {field.shape} does not match grid {grid.shape}")
    lon, lat = grid.mesh()
    r, th = to_storm_polar(np.stack([lon, lat], axis=-1), np.asarray(center, dtype=np.float64))
    if np.count_nonzero(r <= spec.r_max_km) < cfg.n_neighbors:
        raise InputError(f"fewer than {cfg.n_neighbors} grid cells within {spec.r_max_km} km of {tuple(center)}")
    src = _chart(r.reshape(-1), th.reshape(-1), spec, cfg)
    nr, nt = _polar_nodes(spec)
    idx, w = krige_weights(src, _chart(nr, nt, spec, cfg), cfg)
    vals = np.einsum("nk,nk->n", w, field.reshape(-1)[idx])
    return PolarField(spec, vals.reshape(spec.n_r, spec.n_theta))


def bilinear_stencil(spec, r_km, theta):
    """Flat polar-grid indices and weights ``(n, 4)`` for bilinear lookups.

    Radii inside the first/last ring centre are clamped to that ring; points
    with ``r > r_max_km`` get zero weights (outside model support).
    """
    r_km = np.asarray(r_km, dtype=np.float64).reshape(-1)
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    u = np.clip(r_km / spec.dr - 0.5, 0.0, spec.n_r - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), spec.n_r - 2)
    fu = u - i0
    v = (theta + np.pi) / spec.dtheta - 0.5
    j0f = np.floor(v)
    fv = v - j0f
    j0 = j0f.astype(np.int64) % spec.n_theta
    j1 = (j0 + 1) % spec.n_theta
    idx = np.stack([i0 * spec.n_theta + j0, i0 * spec.n_theta + j1,
                    (i0 + 1) * spec.n_theta + j0, (i0 + 1) * spec.n_theta + j1], axis=1)
    w = np.stack([(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv], axis=1)
    w[r_km > spec.r_max_km] = 0.0
    return idx, w


def bilinear_polar_eval(pf, r_km, theta):
    """Bilinear value of a polar field at ``(r_km, theta)``; 0 beyond r_max."""
    r_arr = np.asarray(r_km, dtype=np.float64)
    if (r_arr < 0).any():
        raise InputError("negative radius")
    r_b, t_b = np.broadcast_arrays(r_arr, np.asarray(theta, dtype=np.float64))
    idx, w = bilinear_stencil(pf.spec, r_b, t_b)
    out = np.einsum("nk,nk->n", w, pf.values.reshape(-1)[idx]).reshape(r_b.shape)
    return float(out) if out.ndim == 0 else out


def native_stencil(center, grid, spec=PolarGridSpec()):
    """Bilinear stencil mapping a polar field onto every native cell."""
    lon, lat = grid.mesh()
    r, th = to_storm_polar(np.stack([lon, lat], axis=-1), np.asarray(center, dtype=np.float64))
    return bilinear_stencil(spec, r, th)


def apply_stencil(stencil, polar_values, grid):
    """Evaluate one or more flattened polar fields ``(..., K)`` on the grid."""
    idx, w = stencil
    polar_values = np.asarray(polar_values)
    out = np.einsum("nk,...nk->...n", w, polar_values[..., idx])
    return out.reshape(polar_values.shape[:-1] + grid.shape)


def polar_to_euclid(pf, center, grid):
    """Bilinearly interpolate a polar field onto the native grid."""
    return apply_stencil(native_stencil(center, grid, pf.spec), pf.flatten(), grid)
