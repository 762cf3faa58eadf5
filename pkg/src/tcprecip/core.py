"""Shared data model, geodesy helpers and error types.

Fields live on a regular lon-lat grid (``GridSpec``); storm-relative fields
live on a regular polar grid (``PolarGridSpec``) centred on the storm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

EARTH_RADIUS_KM = 6371.0088
KM_PER_DEG = 111.195


class InputError(ValueError):
    """Invalid user input (bad shapes, out-of-range values, empty sets)."""


class FormatError(InputError):
    """A file does not follow the documented on-disk layout."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (singular system, non-convergence)."""


@dataclass(frozen=True)
class GridSpec:
    """Regular lon-lat grid; ``lon0``/``lat0`` are the first cell centres."""

    n_lon: int
    n_lat: int
    lon0: float
    lat0: float
    d_lon: float
    d_lat: float

    def __post_init__(self):
        if self.n_lon < 2 or self.n_lat < 2:
            raise InputError(f"grid needs n_lon, n_lat >= 2, got {self.n_lon}x{self.n_lat}")
        if not (self.d_lon > 0 and self.d_lat > 0):
            raise InputError(f"grid spacing must be positive, got d_lon={self.d_lon}, d_lat={self.d_lat}")

    @property
    def shape(self):
        return (self.n_lat, self.n_lon)

    @property
    def lons(self):
        return self.lon0 + self.d_lon * np.arange(self.n_lon)

    @property
    def lats(self):
        return self.lat0 + self.d_lat * np.arange(self.n_lat)

    def mesh(self):
        """Return ``(lon, lat)`` arrays of shape ``(n_lat, n_lon)``."""
        return np.meshgrid(self.lons, self.lats)

    def to_dict(self):
        return dict(n_lon=self.n_lon, n_lat=self.n_lat, lon0=self.lon0,
                    lat0=self.lat0, d_lon=self.d_lon, d_lat=self.d_lat)

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_lon"]), int(d["n_lat"]), float(d["lon0"]),
                   float(d["lat0"]), float(d["d_lon"]), float(d["d_lat"]))


@dataclass(frozen=True, eq=False)
class FieldStack:
    """Hourly stack of gridded fields, ``values`` shaped ``(n_t, n_lat, n_lon)``.

    ``times`` holds ``datetime64[s]`` stamps spaced exactly one hour apart.
    """

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray
    units: str = "mm/hr"
    land_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        times = np.asarray(self.times, dtype="datetime64[s]")
        if values.ndim != 3 or values.shape[1:] != self.grid.shape:
            raise InputError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if times.shape != (values.shape[0],):
            raise InputError(f"{times.size} timestamps for {values.shape[0]} fields")
        bad = np.flatnonzero(~np.isfinite(values).reshape(values.shape[0], -1).all(axis=1))
        if bad.size:
            raise InputError(f"non-finite values in field at time index {bad[0]}")
        steps = np.diff(times).astype(np.int64)
        bad = np.flatnonzero(steps != 3600)
        if bad.size:
            raise InputError(f"timestamps not hourly between index {bad[0]} and {bad[0] + 1}")
        if self.units.startswith("mm") and (values < 0).any():
            t = int(np.argwhere(values < 0)[0, 0])
            raise InputError(f"negative precipitation at time index {t}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)
        if self.land_mask is not None:
            mask = np.asarray(self.land_mask, dtype=bool)
            if mask.shape != self.grid.shape:
                raise InputError(f"land mask shape {mask.shape} does not match grid {self.grid.shape}")
            mask.setflags(write=False)
            object.__setattr__(self, "land_mask", mask)

    @property
    def n_t(self):
        return self.values.shape[0]


TRACK_COLUMNS = ("time", "lon", "lat", "rmax_km", "pdef_hpa", "dir_u", "dir_v", "dist_coast_km")

# predictor order used by the trend forests
FEATURE_NAMES = ("rmax_km", "pdef_hpa", "dir_u", "dir_v", "center_u", "center_v", "dist_coast_km")


@dataclass(frozen=True, eq=False)
class StormTrack:
    """Hourly storm predictors; ``center_u``/``center_v`` are lon/lat."""

    times: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    rmax_km: np.ndarray
    pdef_hpa: np.ndarray
    dir_u: np.ndarray
    dir_v: np.ndarray
    dist_coast_km: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype="datetime64[s]")
        object.__setattr__(self, "times", times)
        n = times.size
        for name in TRACK_COLUMNS[1:]:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise InputError(f"track column {name} has shape {arr.shape}, expected ({n},)")
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise InputError(f"non-finite {name} in track row {bad[0]}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if n > 1:
            bad = np.flatnonzero(np.diff(times).astype(np.int64) <= 0)
            if bad.size:
                raise InputError(f"track times not increasing at row {bad[0] + 1}")
        for name, test, what in (("rmax_km", self.rmax_km <= 0, "> 0"),
                                 ("pdef_hpa", self.pdef_hpa < 0, ">= 0"),
                                 ("dist_coast_km", self.dist_coast_km < 0, ">= 0")):
            bad = np.flatnonzero(test)
            if bad.size:
                raise InputError(f"track row {bad[0]}: {name} must be {what}, got {getattr(self, name)[bad[0]]}")
        if (np.abs(self.lat) > 90).any():
            raise InputError("track latitude outside [-90, 90]")

    def __len__(self):
        return self.times.size

    @property
    def centers(self):
        return np.column_stack([self.lon, self.lat])

    def features(self):
        """Predictor matrix ``(n, 7)`` in ``FEATURE_NAMES`` order."""
        return np.column_stack([self.rmax_km, self.pdef_hpa, self.dir_u, self.dir_v,
                                self.lon, self.lat, self.dist_coast_km])


@dataclass(frozen=True)
class PolarGridSpec:
    """Storm-centred polar grid with cell-centred nodes.

    Radii are ``(k + 0.5) * r_max_km / n_r``; angles are
    ``-pi + (j + 0.5) * 2 pi / n_theta`` and wrap around.
    """

    n_r: int = 100
    n_theta: int = 100
    r_max_km: float = 1000.0

    @property
    def dr(self):
        return self.r_max_km / self.n_r

    @property
    def dtheta(self):
        return 2 * np.pi / self.n_theta

    @property
    def radii(self):
        return (np.arange(self.n_r) + 0.5) * self.dr

    @property
    def thetas(self):
        return -np.pi + (np.arange(self.n_theta) + 0.5) * self.dtheta

    @property
    def size(self):
        return self.n_r * self.n_theta


@dataclass(frozen=True, eq=False)
class PolarField:
    spec: PolarGridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.spec.n_r, self.spec.n_theta):
            raise InputError(f"polar values shape {v.shape} != ({self.spec.n_r}, {self.spec.n_theta})")
        if not np.isfinite(v).all():
            raise InputError("polar field contains non-finite values")
        object.__setattr__(self, "values", v)

    def flatten(self):
        """r-major flattening (theta varies fastest)."""
        return self.values.reshape(-1)


def _check_lat(lat):
    lat = np.asarray(lat, dtype=np.float64)
    if (np.abs(lat) > 90).any():
        raise InputError("latitude outside [-90, 90]")
    return lat


def gc_distance(a, b):
    """Great-circle (haversine) distance in km between lon/lat points.

    ``a`` and ``b`` are ``(..., 2)`` arrays (or pairs) of degrees and
    broadcast against each other.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lat1 = np.radians(_check_lat(a[..., 1]))
    lat2 = np.radians(_check_lat(b[..., 1]))
    dlat = lat2 - lat1
    dlon = np.radians(b[..., 0] - a[..., 0])
    h = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def to_storm_polar(s, center):
    """Polar coordinates ``(r_km, theta)`` of points ``s`` about ``center``.

    ``r`` is the great-circle distance; ``theta`` is measured counter-clockwise
    from due east in a local equirectangular chart and lies in ``[-pi, pi)``.
    """
    s = np.asarray(s, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    r = gc_distance(s, center)
    dx = (s[..., 0] - center[..., 0]) * KM_PER_DEG * np.cos(np.radians(center[..., 1]))
    dy = (s[..., 1] - center[..., 1]) * KM_PER_DEG
    theta = np.arctan2(dy, dx)
    theta = np.where(theta >= np.pi, theta - 2 * np.pi, theta)
    return r, theta


def polar_to_lonlat(r_km, theta, center):
    """Inverse of :func:`to_storm_polar` for a single centre.

    The chart direction fixes the ratio of the lon/lat offsets; the offset
    length is then solved so that the great-circle distance equals ``r_km``.
    """
    r_km = np.asarray(r_km, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    lon0, lat0 = float(center[0]), float(center[1])
    ex = np.cos(theta) / (KM_PER_DEG * np.cos(np.radians(lat0)))
    ey = np.sin(theta) / KM_PER_DEG
    s = r_km.copy()
    # Newton on the scale along the fixed chart direction
    for _ in range(30):
        pts = np.stack([lon0 + s * ex, np.clip(lat0 + s * ey, -90, 90)], axis=-1)
        d = gc_distance(pts, (lon0, lat0))
        eps = 1e-3
        pts2 = np.stack([lon0 + (s + eps) * ex, np.clip(lat0 + (s + eps) * ey, -90, 90)], axis=-1)
        slope = (gc_distance(pts2, (lon0, lat0)) - d) / eps
        step = np.where(slope > 0, (d - r_km) / np.where(slope > 0, slope, 1.0), 0.0)
        s = s - step
        if np.max(np.abs(step), initial=0.0) < 1e-9:
            break
    return lon0 + s * ex, lat0 + s * ey


def coast_cells(mask):
    """Boolean array marking cells with a 4-neighbour of the opposite class."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    out[1:, :] |= mask[1:, :] != mask[:-1, :]
    out[:-1, :] |= mask[:-1, :] != mask[1:, :]
    out[:, 1:] |= mask[:, 1:] != mask[:, :-1]
    out[:, :-1] |= mask[:, :-1] != mask[:, 1:]
    return out


def dist_to_coast(center, mask, grid):
    """Distance (km) from ``center`` to the nearest coastal cell centre."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise InputError(f"mask shape {mask.shape} does not match grid {grid.shape}")
    if mask.all() or not mask.any():
        raise InputError("land mask must contain both land and sea cells")
    lon, lat = grid.mesh()
    coast = coast_cells(mask)
    pts = np.column_stack([lon[coast], lat[coast]])
    return float(np.min(gc_distance(pts, np.asarray(center, dtype=np.float64))))
