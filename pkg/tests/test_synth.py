import numpy as np
import pytest

from tcprecip.core import GridSpec, InputError, to_storm_polar
from tcprecip.synth import (VortexParams, centers_along, default_grid, make_storm_set, make_vortex_event,
                            rain_profile)

GRID = GridSpec(41, 41, -100.0, 20.0, 0.2, 0.2)


def _pts(grid):
    lon, lat = grid.mesh()
    return np.stack([lon, lat], axis=-1)


def test_symmetric_without_asymmetry_or_noise():
    c = (-96.0, 24.0)
    ev = make_vortex_event(VortexParams(GRID, (c,), 6, rmax_km=50.0, peak_rain=8.0))
    r, _ = to_storm_polar(_pts(GRID), np.asarray(c))
    for t in range(6):
        assert np.allclose(ev.precip.values[t], rain_profile(r, 50.0, 8.0), atol=1e-12)
        speed = np.hypot(ev.u.values[t], ev.v.values[t])
        assert np.allclose(speed, 40.0 * np.where(r <= 50, r / 50, 50 / np.maximum(r, 1e-12)))


def test_rain_ring_peaks_at_rmax():
    r = np.linspace(0, 400, 4001)
    f = rain_profile(r, 70.0, 5.0)
    assert r[np.argmax(f)] == pytest.approx(70.0, abs=0.1)
    assert f.max() == pytest.approx(5.0)


def test_pressure_minimum_at_centre():
    c = (-96.0, 24.0)
    ev = make_vortex_event(VortexParams(GRID, (c,), 4, pdef_hpa=35.0))
    i, j = np.unravel_index(np.argmin(ev.p.values[0]), GRID.shape)
    assert (GRID.lons[j], GRID.lats[i]) == pytest.approx(c)
    assert ev.p.values[0].min() == pytest.approx(1013.0 - 35.0)


def test_noise_is_seeded():
    p = VortexParams(GRID, ((-96.0, 24.0),), 5, noise=0.4, dry_threshold=0.2)
    a = make_vortex_event(p, seed=3).precip.values
    assert np.array_equal(a, make_vortex_event(p, seed=3).precip.values)
    assert not np.array_equal(a, make_vortex_event(p, seed=4).precip.values)
    assert np.all(a >= 0) and np.any(a == 0)


def test_track_truth():
    p = VortexParams(GRID, ((-98.0, 22.0), (-94.0, 26.0)), 9)
    ev = make_vortex_event(p)
    assert np.allclose(ev.track.centers, centers_along(p.waypoints, 9))
    assert np.allclose(ev.track.dir_u, 0.5) and np.allclose(ev.track.dir_v, 0.5)
    assert np.all(np.diff(ev.track.times).astype(int) == 3600)


def test_validation():
    with pytest.raises(InputError):
        make_vortex_event(VortexParams(GRID, ((0.0, 0.0),), 6))
    with pytest.raises(InputError):
        make_vortex_event(VortexParams(GRID, ((-96.0, 24.0),), 3))
    with pytest.raises(InputError):
        make_vortex_event(VortexParams(GRID, ((-96.0, 24.0),), 6, rmax_km=[1.0, 2.0]))


def test_storm_set_varies_and_is_reproducible():
    a = make_storm_set(3, default_grid(20, 0.4), 12, seed=5)
    b = make_storm_set(3, default_grid(20, 0.4), 12, seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.precip.values, y.precip.values)
    assert not np.allclose(a[0].track.centers, a[1].track.centers)
