"""Probabilistic verification of simulated ensembles against observed fields."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import InputError

BAND_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)
BRIER_BIN_WIDTH = 0.02

# Port Arthur, Houston, Corpus Christi, Galveston (land), Galveston (coast)
TEXAS_PIXELS = ((-93.93, 29.87), (-95.37, 29.76), (-97.40, 27.80), (-94.85, 29.32), (-94.75, 29.22))


def brier(prob, obs):
    """Mean Brier score ``mean((o - f)^2)``."""
    f = np.asarray(prob, dtype=np.float64)
    o = np.asarray(obs, dtype=np.float64)
    if f.shape != o.shape:
        raise InputError(f"probabilities {f.shape} and outcomes {o.shape} are not aligned")
    if ((f < 0) | (f > 1)).any():
        raise InputError("forecast probabilities must lie in [0, 1]")
    return float(np.mean((o - f) ** 2))


def occurrence_probability(ensemble):
    """Fraction of members with positive precipitation; ``ensemble`` is ``(E, ...)``."""
    return np.mean(np.asarray(ensemble) > 0, axis=0)


def brier_by_hour(ensemble, obs):
    """Brier score of each hour over all cells; ``ensemble`` ``(E, T, ...)``."""
    f = occurrence_probability(ensemble)
    o = (np.asarray(obs) > 0).astype(np.float64)
    return np.mean(((o - f) ** 2).reshape(o.shape[0], -1), axis=1)


def rank_histogram(ensemble, obs, seed=None):
    """Verification rank histogram with ``E + 1`` bins.

    ``ensemble`` is ``(E, ...)`` and ``obs`` matches the trailing shape. The
    rank of the observation is the number of members below it plus a uniform
    draw over the members tied with it.
    """
    ens = np.asarray(ensemble, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if ens.ndim < 1 or ens.shape[0] < 1:
        raise InputError("ensemble needs at least one member")
    if ens.shape[1:] != obs.shape:
        raise InputError(f"ensemble {ens.shape} and observations {obs.shape} are not aligned")
    E = ens.shape[0]
    ens = ens.reshape(E, -1)
    obs = obs.reshape(-1)
    return np.bincount(_ranks(ens, obs, np.random.default_rng(seed)), minlength=E + 1)


def _ranks(ens, obs, rng):
    below = np.sum(ens < obs, axis=0)
    ties = np.sum(ens == obs, axis=0)
    return below + np.floor(rng.random(np.shape(obs)) * (ties + 1)).astype(np.int64)


def sampled_ranks(ensemble, truths, hours_per_truth=4, seed=None):
    """Ranks of several independent truths at sparse, well separated pairs.

    ``ensemble`` is ``(E, T, ...)`` and ``truths`` ``(K, T, ...)``. Every
    truth contributes ``hours_per_truth`` hours spread evenly over the event
    (random phase) with one random cell each. Ranks taken at all cells of
    one realization share its large-scale anomalies, so a chi-square test on
    them rejects even a perfectly calibrated ensemble; the sparse sample
    keeps the ranks close to independent.
    """
    ens = np.asarray(ensemble, dtype=np.float64)
    tr = np.asarray(truths, dtype=np.float64)
    if ens.shape[1:] != tr.shape[1:]:
        raise InputError(f"ensemble {ens.shape} and truths {tr.shape} are not aligned")
    T = tr.shape[1]
    h = int(hours_per_truth)
    if not 1 <= h <= T:
        raise InputError(f"hours_per_truth must lie in [1, {T}], got {h}")
    E, K = ens.shape[0], tr.shape[0]
    ens = ens.reshape(E, T, -1)
    tr = tr.reshape(K, T, -1)
    rng = np.random.default_rng(seed)
    step = T / h
    out = np.empty((K, h), dtype=np.int64)
    for k in range(K):
        hours = (np.floor(rng.random() * step + step * np.arange(h)).astype(np.int64)) % T
        cells = rng.integers(tr.shape[2], size=h)
        out[k] = _ranks(ens[:, hours, cells], tr[k, hours, cells], rng)
    return out.reshape(-1)


def qq_pairs(ensemble_series, obs_series):
    """Matched quantiles at probabilities ``(i - 0.5) / n``.

    Returns a dict with ``prob``, ``obs`` (the sorted observations),
    ``model`` (``(E, n)`` per-member quantiles) and the pointwise member
    envelope ``lo``/``hi``.
    """
    obs = np.asarray(obs_series, dtype=np.float64).reshape(-1)
    ens = np.atleast_2d(np.asarray(ensemble_series, dtype=np.float64))
    if obs.size == 0 or ens.shape[1] == 0:
        raise InputError("Q-Q pairs need nonempty series")
    n = obs.size
    prob = (np.arange(1, n + 1) - 0.5) / n
    model = np.quantile(ens, prob, axis=1, method="hazen").T
    return dict(prob=prob, obs=np.quantile(obs, prob, method="hazen"), model=model,
                lo=model.min(axis=0), hi=model.max(axis=0))


def integrated_series(stack):
    """Domain total per hour of a ``(T, n_lat, n_lon)`` array (mm x cells)."""
    a = np.asarray(getattr(stack, "values", stack), dtype=np.float64)
    return a.reshape(a.shape[0], -1).sum(axis=1)


def ensemble_band(stacks, levels=BAND_LEVELS):
    """Per-hour quantiles of the integrated series across members,
    ``(len(levels), T)``."""
    series = np.stack([integrated_series(s) for s in stacks])
    return np.quantile(series, levels, axis=0)


def total_maps(stacks, levels=(0.05, 0.95)):
    """Time-integrated maps per member and their pointwise quantiles."""
    maps = np.stack([np.asarray(getattr(s, "values", s)).sum(axis=0) for s in stacks])
    return maps, np.quantile(maps, levels, axis=0)


def pixel_indices(grid, pixels):
    """Nearest-cell ``(i, j)`` for each lon/lat pixel inside the grid extent."""
    out = []
    for lon, lat in pixels:
        j = int(round((lon - grid.lon0) / grid.d_lon))
        i = int(round((lat - grid.lat0) / grid.d_lat))
        if 0 <= i < grid.n_lat and 0 <= j < grid.n_lon:
            out.append((i, j))
    return out


def default_pixels(grid):
    """The five Texas sites if they fall on the grid, otherwise five cells
    evenly spaced along the middle row."""
    idx = pixel_indices(grid, TEXAS_PIXELS)
    if idx:
        return idx
    i = grid.n_lat // 2
    return [(i, int(j)) for j in np.linspace(0, grid.n_lon - 1, 7)[1:-1].round()]


def verification_report(ensemble, obs, grid, pixels=None, seed=None):
    """All verification statistics for one held-out event.

    ``ensemble`` is ``(E, T, n_lat, n_lon)``; ``obs`` is ``(T, n_lat, n_lon)``.
    Arrays are converted to lists so the result is JSON-serialisable.
    """
    ens = np.asarray(ensemble, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if ens.shape[1:] != obs.shape:
        raise InputError(f"ensemble {ens.shape} and observations {obs.shape} are not aligned")
    pix = default_pixels(grid) if pixels is None else pixel_indices(grid, pixels)
    f = occurrence_probability(ens)
    o = (obs > 0).astype(np.float64)
    per_hour = brier_by_hour(ens, obs)
    edges = np.linspace(0.0, 1.0, int(round(1 / BRIER_BIN_WIDTH)) + 1)
    qq = []
    for i, j in pix:
        q = qq_pairs(ens[:, :, i, j], obs[:, i, j])
        qq.append(dict(i=i, j=j, lon=float(grid.lons[j]), lat=float(grid.lats[i]),
                       **{k: v.tolist() for k, v in q.items()}))
    band = ensemble_band(ens)
    maps, map_q = total_maps(ens)
    return dict(
        n_members=int(ens.shape[0]),
        n_hours=int(obs.shape[0]),
        brier_mean=brier(f, o),
        brier_climatology=float(o.mean() * (1 - o.mean())),
        brier_per_hour=per_hour.tolist(),
        brier_histogram=dict(bin_width=BRIER_BIN_WIDTH, counts=np.histogram(per_hour, edges)[0].tolist()),
        rank_histogram=rank_histogram(ens, obs, seed).tolist(),
        qq=qq,
        integrated=dict(obs=integrated_series(obs).tolist(),
                        levels=list(BAND_LEVELS), band=band.tolist(),
                        map_obs=obs.sum(axis=0).tolist(),
                        map_q05=map_q[0].tolist(), map_q95=map_q[1].tolist()),
    )


REPORT_KEYS = ("brier_mean", "brier_histogram", "rank_histogram", "qq", "integrated")


def check_report(report):
    """Raise ``InputError`` if a report lacks any required field."""
    missing = [k for k in REPORT_KEYS if k not in report]
    if missing:
        raise InputError(f"report missing {', '.join(missing)}")
    if sum(report["brier_histogram"]["counts"]) != report["n_hours"]:
        raise InputError("Brier histogram does not cover every hour")
    if sum(report["rank_histogram"]) <= 0:
        raise InputError("empty rank histogram")


def write_csvs(report, out_dir, prefix=""):
    """Plot-ready CSV files for each statistic in a single-event report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def dump(name, header, rows):
        with open(out / f"{prefix}{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    dump("brier_per_hour", ["hour", "brier"], enumerate(report["brier_per_hour"]))
    dump("rank_histogram", ["rank", "count"], enumerate(report["rank_histogram"]))
    integ = report["integrated"]
    dump("integrated", ["hour", "obs"] + [f"q{int(round(100 * l)):02d}" for l in integ["levels"]],
         ([h, o] + [b[h] for b in integ["band"]] for h, o in enumerate(integ["obs"])))
    rows = []
    for k, q in enumerate(report["qq"]):
        for n, p in enumerate(q["prob"]):
            rows.append([k, q["lon"], q["lat"], p, q["obs"][n], q["lo"][n], q["hi"][n]]
                        + [m[n] for m in q["model"]])
    dump("qq", ["pixel", "lon", "lat", "prob", "obs", "model_lo", "model_hi"]
         + [f"member{e}" for e in range(report["n_members"])], rows)
