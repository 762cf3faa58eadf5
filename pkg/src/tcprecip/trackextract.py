"""Derive track predictors (centre, Rmax, pressure deficit, motion, distance
to coast) from gridded 850 hPa winds and surface pressure."""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import correlate1d, map_coordinates
from scipy.optimize import minimize_scalar

from .core import (KM_PER_DEG, InputError, StormTrack, dist_to_coast,
                   gc_distance)

M_PER_DEG = KM_PER_DEG * 1000.0
AMBIENT_PRESSURE_HPA = 1013.0
MIN_RMAX_KM = 1.0


def smooth_field(f, bandwidth_cells=1.5):
    """Normalised convolution with a separable Laplace (double exponential)
    kernel ``exp(-(|di| + |dj|) / bandwidth)`` truncated at 4 bandwidths."""
    if not bandwidth_cells > 0:
        raise InputError(f"bandwidth must be > 0, got {bandwidth_cells}")
    f = np.asarray(f, dtype=np.float64)
    half = int(np.floor(4 * bandwidth_cells))
    k = np.exp(-np.abs(np.arange(-half, half + 1)) / bandwidth_cells)

    def conv(a):
        a = correlate1d(a, k, axis=0, mode="constant", cval=0.0)
        return correlate1d(a, k, axis=1, mode="constant", cval=0.0)

    return conv(f) / conv(np.ones_like(f))


def curl(u, v, grid):
    """Vertical vorticity ``dv/dx - du/dy`` (1/s) with second-order
    differences; ``u``, ``v`` in m/s on ``grid``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.shape != grid.shape:
        raise InputError(f"u {u.shape} and v {v.shape} must both match grid {grid.shape}")
    if min(u.shape) < 3:
        raise InputError("curl needs at least a 3x3 grid")
    dx = grid.d_lon * M_PER_DEG * np.cos(np.radians(grid.lats))[:, None]
    dy = grid.d_lat * M_PER_DEG
    dvdx = np.gradient(v, axis=1, edge_order=2) / dx
    dudy = np.gradient(u, axis=0, edge_order=2) / dy
    return dvdx - dudy


def detect_center(curl_field, grid, reference_center, window_deg=2.0):
    """Cell centre of maximal curl within an L-infinity window (degrees)
    around ``reference_center``. Ties go to the lowest lat, then lon index."""
    lon, lat = grid.mesh()
    tol = 1e-9
    inside = ((np.abs(lon - reference_center[0]) <= window_deg + tol)
              & (np.abs(lat - reference_center[1]) <= window_deg + tol))
    if not inside.any():
        raise InputError(f"no grid cell within {window_deg} deg of {tuple(reference_center)}")
    z = np.where(inside, curl_field, -np.inf)
    i, j = np.unravel_index(np.argmax(z), z.shape)
    return float(lon[i, j]), float(lat[i, j])


def refine_center(curl_field, grid, cell_center, half_cells=4, frac=0.5):
    """Sub-cell centre: curl-weighted centroid of the cells above ``frac``
    times the peak, within ``half_cells`` of the peak cell.

    Grid-registered centres of a slow storm form a staircase whose steps the
    spline cannot tell from motion; the centroid removes most of that
    quantisation. Falls back to ``cell_center`` when the peak is not positive.
    """
    j = int(round((cell_center[0] - grid.lon0) / grid.d_lon))
    i = int(round((cell_center[1] - grid.lat0) / grid.d_lat))
    peak = curl_field[i, j]
    if not peak > 0:
        return tuple(map(float, cell_center))
    box = (slice(max(i - half_cells, 0), i + half_cells + 1), slice(max(j - half_cells, 0), j + half_cells + 1))
    w = np.maximum(curl_field[box] - frac * peak, 0.0)
    lon, lat = grid.mesh()
    return float(np.sum(w * lon[box]) / w.sum()), float(np.sum(w * lat[box]) / w.sum())


class SmoothingSpline:
    """Natural cubic smoothing spline (Reinsch form).

    Minimises ``sum (y_i - f(t_i))^2 + lam * int f''^2``. ``lam=None`` picks
    the penalty by generalized cross-validation; ``lam=0`` interpolates and
    ``lam=inf`` gives the least-squares line.
    """

    def __init__(self, t, y, lam=None):
        t = np.asarray(t, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if t.ndim != 1 or t.shape != y.shape:
            raise InputError("t and y must be 1-D arrays of equal length")
        if t.size < 4:
            raise InputError(f"smoothing spline needs n >= 4 points, got {t.size}")
        if (np.diff(t) <= 0).any():
            raise InputError("t must be strictly increasing")
        if lam is not None and not lam >= 0:
            raise InputError(f"lam must be >= 0, got {lam}")
        self.t = t
        self.Q, self.R = _reinsch_matrices(t)
        if lam is None:
            lam = self._gcv_lambda(y)
        self.lam = float(lam)
        self.fitted = self._fit(y, self.lam)
        self._spline = CubicSpline(t, self.fitted, bc_type="natural")

    def __call__(self, t):
        return self._spline(t)

    def _fit(self, y, lam):
        Q, R = self.Q, self.R
        if lam == 0:
            return y.copy()
        if lam < 1:
            g = np.linalg.solve(R + lam * Q.T @ Q, Q.T @ y)
            return y - lam * (Q @ g)
        # scaled form stays well conditioned as lam -> inf
        g = np.linalg.solve(R / lam + Q.T @ Q, Q.T @ y)
        return y - Q @ g

    def _gcv_lambda(self, y):
        # K = Q R^-1 Q^T; the smoother is (I + lam K)^-1
        K = self.Q @ np.linalg.solve(self.R, self.Q.T)
        evals, evecs = np.linalg.eigh((K + K.T) / 2)
        evals = np.clip(evals, 0.0, None)
        z = evecs.T @ y
        n = y.size
        pos = evals[evals > evals.max() * 1e-12]

        def gcv(loglam):
            shrink = 1.0 / (1.0 + 10.0 ** loglam * evals)
            rss = np.sum(((1 - shrink) * z) ** 2)
            return n * rss / (n - shrink.sum()) ** 2

        lo = np.log10(1.0 / pos.max()) - 3
        hi = np.log10(1.0 / pos.min()) + 3
        grid = np.linspace(lo, hi, 121)
        scores = np.array([gcv(g) for g in grid])
        k = int(np.argmin(scores))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        if b > a:
            res = minimize_scalar(gcv, bounds=(a, b), method="bounded", options={"xatol": 1e-6})
            best = res.x if res.fun <= scores[k] else grid[k]
        else:
            best = grid[k]
        return 10.0 ** best


def _reinsch_matrices(t):
    n = t.size
    h = np.diff(t)
    Q = np.zeros((n, n - 2))
    R = np.zeros((n - 2, n - 2))
    for j in range(1, n - 1):
        Q[j - 1, j - 1] = 1 / h[j - 1]
        Q[j, j - 1] = -1 / h[j - 1] - 1 / h[j]
        Q[j + 1, j - 1] = 1 / h[j]
        R[j - 1, j - 1] = (h[j - 1] + h[j]) / 3
        if j < n - 2:
            R[j - 1, j] = R[j, j - 1] = h[j] / 6
    return Q, R


def smoothing_spline(t, y, lam=None):
    """Return ``(fitted_values, spline)``; see :class:`SmoothingSpline`."""
    s = SmoothingSpline(t, y, lam)
    return s.fitted, s


def radius_max_wind(speed, grid, center, search_km=400.0):
    """Great-circle distance (km) from ``center`` to the fastest wind cell
    within ``search_km``; ties go to the nearer cell."""
    lon, lat = grid.mesh()
    d = gc_distance(np.stack([lon, lat], axis=-1), np.asarray(center, dtype=np.float64))
    inside = d <= search_km
    if not inside.any():
        raise InputError(f"no grid cell within {search_km} km of {tuple(center)}")
    s = np.asarray(speed, dtype=np.float64)[inside]
    dd = d[inside]
    order = np.lexsort((dd, -s))
    return float(dd[order[0]])


def _value_at(field, grid, lonlat):
    fi = (lonlat[1] - grid.lat0) / grid.d_lat
    fj = (lonlat[0] - grid.lon0) / grid.d_lon
    return float(map_coordinates(field, [[fi], [fj]], order=3, mode="nearest")[0])


def extract_track(u_stack, v_stack, p_stack, reference, land_mask=None,
                  bandwidth_cells=1.5, window_deg=2.0, search_km=400.0, lam=None,
                  rmax_from_smoothed=False, subgrid=True):
    """Derive a :class:`StormTrack` from wind and pressure stacks.

    ``reference`` is an ``(n_t, 2)`` lon/lat array (or a StormTrack) of
    first-guess centres used to bound the vorticity search. Smoothed winds
    drive the centre search; Rmax uses the unsmoothed speed unless
    ``rmax_from_smoothed`` is set (smoothing pushes the speed peak outward
    by roughly one bandwidth). With ``subgrid`` the detected cell is
    refined by :func:`refine_center` before the temporal spline.
    """
    grid = u_stack.grid
    if v_stack.grid != grid or p_stack.grid != grid:
        raise InputError("u, v and p stacks must share one grid")
    n = u_stack.n_t
    if v_stack.n_t != n or p_stack.n_t != n:
        raise InputError("u, v and p stacks must have the same number of hours")
    if not (np.array_equal(u_stack.times, v_stack.times) and np.array_equal(u_stack.times, p_stack.times)):
        raise InputError("u, v and p stacks are not aligned in time")
    ref = reference.centers if isinstance(reference, StormTrack) else np.asarray(reference, dtype=np.float64)
    if ref.shape != (n, 2):
        raise InputError(f"reference track has shape {ref.shape}, expected ({n}, 2)")
    if land_mask is None:
        land_mask = u_stack.land_mask if u_stack.land_mask is not None else p_stack.land_mask
    if land_mask is None:
        raise InputError("a land mask is required for the distance-to-coast predictor")

    raw_centers = np.empty((n, 2))
    speeds = []
    for t in range(n):
        us = smooth_field(u_stack.values[t], bandwidth_cells)
        vs = smooth_field(v_stack.values[t], bandwidth_cells)
        z = curl(us, vs, grid)
        c = detect_center(z, grid, ref[t], window_deg)
        raw_centers[t] = refine_center(z, grid, c) if subgrid else c
        if rmax_from_smoothed:
            speeds.append(np.hypot(us, vs))
        else:
            speeds.append(np.hypot(u_stack.values[t], v_stack.values[t]))

    hours = np.arange(n, dtype=np.float64)
    lon_s, _ = smoothing_spline(hours, raw_centers[:, 0], lam)
    lat_s, _ = smoothing_spline(hours, raw_centers[:, 1], lam)
    centers = np.column_stack([lon_s, lat_s])

    rmax_raw = np.array([radius_max_wind(speeds[t], grid, centers[t], search_km) for t in range(n)])
    rmax, _ = smoothing_spline(hours, rmax_raw, lam)
    rmax = np.clip(rmax, MIN_RMAX_KM, search_km)

    dir_u = np.empty(n)
    dir_v = np.empty(n)
    dir_u[1:] = np.diff(lon_s)
    dir_v[1:] = np.diff(lat_s)
    dir_u[0], dir_v[0] = dir_u[1], dir_v[1]

    pdef = np.array([max(0.0, AMBIENT_PRESSURE_HPA - _value_at(p_stack.values[t], grid, centers[t]))
                     for t in range(n)])
    dcoast = np.array([dist_to_coast(centers[t], land_mask, grid) for t in range(n)])
    return StormTrack(u_stack.times, lon_s, lat_s, rmax, pdef, dir_u, dir_v, dcoast)
