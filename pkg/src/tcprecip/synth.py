"""Analytic synthetic storms with known truth.

Winds are a Rankine vortex (solid-body core, 1/r outside), pressure is a
Gaussian well and rain is a ring peaking at the radius of maximum winds with
a first-harmonic asymmetry and optional multiplicative gamma noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import FieldStack, GridSpec, InputError, StormTrack, dist_to_coast, to_storm_polar
from .trackextract import AMBIENT_PRESSURE_HPA


@dataclass(frozen=True)
class VortexParams:
    """Parameters of one synthetic event.

    Per-hour quantities (``rmax_km``, ``pdef_hpa``, ``peak_rain``) may be
    scalars or sequences of length ``duration_h``. The centre moves linearly
    between ``waypoints`` spread evenly over the event. Land is every cell
    with ``lat >= coast_lat``.
    """

    grid: GridSpec
    waypoints: Sequence = ((0.0, 0.0),)
    duration_h: int = 24
    rmax_km: object = 60.0
    peak_wind: float = 40.0
    pdef_hpa: object = 40.0
    peak_rain: object = 10.0
    asym_amp: float = 0.0
    asym_phase: float = 0.0
    noise: float = 0.0
    dry_threshold: float = 0.0
    coast_lat: Optional[float] = None
    start: str = "2000-01-01T00:00:00"


@dataclass(frozen=True, eq=False)
class SynthEvent:
    u: FieldStack
    v: FieldStack
    p: FieldStack
    precip: FieldStack
    track: StormTrack
    params: VortexParams


def _per_hour(v, n, name):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 0:
        return np.full(n, float(a))
    if a.shape != (n,):
        raise InputError(f"{name} must be a scalar or have {n} entries, got shape {a.shape}")
    return a


def centers_along(waypoints, n):
    w = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    if len(w) == 1:
        return np.repeat(w, n, axis=0)
    s = np.linspace(0.0, len(w) - 1, n)
    k = np.minimum(np.floor(s).astype(int), len(w) - 2)
    f = (s - k)[:, None]
    return w[k] * (1 - f) + w[k + 1] * f


def land_mask_for(grid, coast_lat=None):
    lat = grid.mesh()[1]
    if coast_lat is None:
        coast_lat = grid.lat0 + grid.d_lat * (0.7 * (grid.n_lat - 1))
    return lat >= coast_lat


def rain_profile(r, rmax, peak):
    """``peak * (r / rmax) * exp(1 - r / rmax)``; peaks at ``r = rmax``."""
    x = r / rmax
    return peak * x * np.exp(1.0 - x)


def make_vortex_event(params, seed=None):
    """Generate wind, pressure and precipitation stacks plus the true track."""
    g = params.grid
    n = int(params.duration_h)
    if n < 4:
        raise InputError("duration must be at least 4 hours")
    centers = centers_along(params.waypoints, n)
    lon_min, lon_max = g.lon0, g.lon0 + g.d_lon * (g.n_lon - 1)
    lat_min, lat_max = g.lat0, g.lat0 + g.d_lat * (g.n_lat - 1)
    if ((centers[:, 0] < lon_min) | (centers[:, 0] > lon_max)
            | (centers[:, 1] < lat_min) | (centers[:, 1] > lat_max)).any():
        raise InputError("track waypoints must lie inside the grid")
    rmax = _per_hour(params.rmax_km, n, "rmax_km")
    pdef = _per_hour(params.pdef_hpa, n, "pdef_hpa")
    peak = _per_hour(params.peak_rain, n, "peak_rain")
    rng = np.random.default_rng(seed)
    lon, lat = g.mesh()
    pts = np.stack([lon, lat], axis=-1)
    u = np.empty((n,) + g.shape)
    v = np.empty_like(u)
    p = np.empty_like(u)
    rain = np.empty_like(u)
    for t in range(n):
        r, th = to_storm_polar(pts, centers[t])
        speed = params.peak_wind * np.where(r <= rmax[t], r / rmax[t], rmax[t] / np.maximum(r, 1e-12))
        u[t] = -speed * np.sin(th)
        v[t] = speed * np.cos(th)
        p[t] = AMBIENT_PRESSURE_HPA - pdef[t] * np.exp(-(r / (2 * rmax[t])) ** 2)
        f = rain_profile(r, rmax[t], peak[t]) * (1 + params.asym_amp * np.cos(th - params.asym_phase))
        if params.noise > 0:
            k = 1.0 / params.noise ** 2
            f = f * rng.gamma(k, 1.0 / k, size=f.shape)
        rain[t] = np.maximum(f - params.dry_threshold, 0.0)
    times = np.datetime64(params.start, "s") + np.arange(n) * np.timedelta64(3600, "s")
    mask = land_mask_for(g, params.coast_lat)
    dir_u = np.empty(n)
    dir_v = np.empty(n)
    dir_u[1:] = np.diff(centers[:, 0])
    dir_v[1:] = np.diff(centers[:, 1])
    dir_u[0], dir_v[0] = dir_u[1], dir_v[1]
    dcoast = np.array([dist_to_coast(c, mask, g) for c in centers])
    track = StormTrack(times, centers[:, 0], centers[:, 1], rmax, pdef, dir_u, dir_v, dcoast)
    mk = lambda a, units: FieldStack(g, times, a, units, mask)
    return SynthEvent(mk(u, "m/s"), mk(v, "m/s"), mk(p, "hPa"), mk(rain, "mm/hr"), track, params)


def default_grid(n=30, spacing=0.33, lon0=-98.0, lat0=21.0):
    return GridSpec(n, n, lon0, lat0, spacing, spacing)


def storm_set_params(n_events, grid, duration_h=48, seed=0, noise=0.3, dry_threshold=0.3):
    """Varied event parameters: storms cross the domain with different
    headings, sizes and intensity ramps; rain scales with pressure deficit."""
    rng = np.random.default_rng(seed)
    lon_c = grid.lon0 + grid.d_lon * (grid.n_lon - 1) / 2
    lat_c = grid.lat0 + grid.d_lat * (grid.n_lat - 1) / 2
    half_w = 0.3 * grid.d_lon * (grid.n_lon - 1)
    half_h = 0.3 * grid.d_lat * (grid.n_lat - 1)
    out = []
    hours = np.arange(duration_h) / max(duration_h - 1, 1)
    for _ in range(n_events):
        ang = rng.uniform(np.pi / 6, 5 * np.pi / 6)
        start = (lon_c - half_w * np.cos(ang) * rng.uniform(0.6, 1.0), lat_c - half_h * np.sin(ang))
        end = (lon_c + half_w * np.cos(ang) * rng.uniform(0.6, 1.0), lat_c + half_h * np.sin(ang))
        p0, p1 = rng.uniform(20, 70, size=2)
        pdef = p0 + (p1 - p0) * hours
        r0, r1 = rng.uniform(40, 90, size=2)
        out.append(VortexParams(
            grid=grid, waypoints=(start, end), duration_h=duration_h,
            rmax_km=r0 + (r1 - r0) * hours, peak_wind=float(rng.uniform(30, 55)),
            pdef_hpa=pdef, peak_rain=pdef / 6.0,
            asym_amp=float(rng.uniform(0.2, 0.7)), asym_phase=float(rng.uniform(-np.pi, np.pi)),
            noise=noise, dry_threshold=dry_threshold,
            start=str(np.datetime64("2000-01-01T00:00:00") + np.timedelta64(30 * len(out), "D")),
        ))
    return out


def make_storm_set(n_events, grid=None, duration_h=48, seed=0, **kw):
    grid = default_grid() if grid is None else grid
    params = storm_set_params(n_events, grid, duration_h, seed, **kw)
    ss = np.random.SeedSequence(seed).spawn(n_events)
    return [make_vortex_event(p, s) for p, s in zip(params, ss)]
