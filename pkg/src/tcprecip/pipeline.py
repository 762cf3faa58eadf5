"""Model fitting, ensemble simulation and leave-one-storm-out validation."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

from . import __version__
from .ar1 import fit_ar1, simulate_ar1
from .circular import estimate_residual_model, fit_harmonics_stack, residual_fields, simulate_Z
from .core import FieldStack, InputError, NumericalError, PolarGridSpec
from .eof import assemble_matrix, compute_eofs, reconstruct_many
from .marginal import Ecdf, anamorphose, fit_gamma, taper_weights
from .model import FitConfig, FittedModel
from .regrid import apply_stencil, euclid_to_polar, native_stencil
from .rforest import ForestConfig, fit_forest, predict, variable_importance
from .verify import verification_report


def child_seed(root, tag, *keys):
    """Deterministic 64-bit seed for a ``(tag, keys...)`` stream under ``root``."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(tag.encode())] + [int(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


@contextmanager
def stage(name):
    """Prefix errors raised inside the block with a stage label."""
    try:
        yield
    except (InputError, NumericalError) as exc:
        msg = str(exc)
        if msg.startswith("["):
            raise
        raise type(exc)(f"[{name}] {msg}") from exc


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _check_events(events):
    for k, (stack, track) in enumerate(events):
        if len(track) != stack.n_t:
            raise InputError(f"event {k}: track has {len(track)} rows but the stack has {stack.n_t} hours")
        if not np.array_equal(track.times, stack.times):
            raise InputError(f"event {k}: track and stack times differ")
    grids = {stack.grid for stack, _ in events}
    if len(grids) > 1:
        raise InputError("all events must share one grid")


def polar_stack(stack, track, cfg, spec=PolarGridSpec(), threads=1):
    """Krige every hour of ``stack`` onto the storm-centred polar grid."""
    krige = cfg.krige

    def one(t):
        return euclid_to_polar(stack.values[t], stack.grid, track.centers[t], krige, spec).values

    return np.stack(_map(one, range(stack.n_t), threads))


def fit_model(events, cfg=FitConfig(), event_ids=None, threads=1, polar=None):
    """Estimate every model component from ``(precip_stack, track)`` pairs.

    ``polar`` optionally supplies the already kriged ``(T, n_r, n_theta)``
    stack of each event (they only depend on the event and the kriging
    settings, so cross-validation computes them once).
    """
    if len(events) < 2:
        raise InputError("need at least two events to fit")
    _check_events(events)
    spec = PolarGridSpec()
    with stage("regrid"):
        if polar is None:
            Y = [polar_stack(s, tr, cfg, spec, threads) for s, tr in events]
        else:
            Y = list(polar)
    lengths = [y.shape[0] for y in Y]
    breaks = list(np.cumsum([0] + lengths[:-1]))
    with stage("eof"):
        P = assemble_matrix(Y, spec)
        basis, pcs = compute_eofs(P, min(cfg.n_eofs, P.shape[1]), spec, center=cfg.center_eofs)
    L = basis.L
    X = np.concatenate([tr.features() for _, tr in events])
    forests, mu_hat = [], np.empty_like(pcs)
    with stage("rforest"):
        for l in range(L):
            fc = ForestConfig(cfg.n_trees, cfg.mtry, cfg.min_node, True, child_seed(cfg.seed, "forest", l))
            f, oob = fit_forest(X, pcs[l], fc, threads=threads, return_oob=True)
            forests.append(f)
            mu_hat[l] = oob
    W = pcs - mu_hat
    with stage("ar1"):
        ar = [fit_ar1(np.split(W[l], breaks[1:])) for l in range(L)]
    with stage("circular"):
        U = residual_fields(np.concatenate(Y), basis, mu_hat)
        coeffs = fit_harmonics_stack(U, cfg.n_harmonics, spec)
        residual = estimate_residual_model(coeffs, breaks, spec)
    with stage("marginal"):
        wet = np.concatenate([s.values[s.values > 0] for s, _ in events])
        gamma = fit_gamma(wet)
    meta = dict(
        event_ids=list(event_ids) if event_ids is not None else list(range(len(events))),
        event_hours=[int(n) for n in lengths],
        seed=int(cfg.seed),
        version=__version__,
        variance_explained=basis.variance_explained(),
        importance=[variable_importance(f).tolist() for f in forests],
    )
    return FittedModel(spec, basis, forests, ar, residual, gamma, cfg, meta)


def trend(model, track):
    """Forest trend ``mu_l(t)`` for a track, ``(L, T)``."""
    X = track.features()
    return np.stack([predict(f, X) for f in model.forests])


def simulate_latent(model, track, grid, n_members, seed=0, stochastic=True, threads=1):
    """Latent Gaussian field ``Y`` on the native grid, ``(E, T, n_lat, n_lon)``.

    Member ``e`` depends only on ``(seed, e)``.
    """
    T = len(track)
    mu = trend(model, track)
    stencils = [native_stencil(track.centers[t], grid, model.spec) for t in range(T)]

    def member(e):
        c = mu.copy()
        Z = 0.0
        if stochastic:
            for l, p in enumerate(model.ar):
                c[l] += simulate_ar1(p, T, child_seed(seed, "W", e, l))
            Z = simulate_Z(model.residual, T, child_seed(seed, "Z", e)).values.reshape(T, -1)
        Yp = reconstruct_many(model.basis, c) + Z
        return np.stack([apply_stencil(stencils[t], Yp[t], grid) for t in range(T)])

    return np.stack(_map(member, range(n_members), threads))


def simulate_event(model, track, grid, n_members=None, seed=0, stochastic=True, taper=True,
                   land_mask=None, threads=1, return_array=False):
    """Ensemble of precipitation stacks for one storm track.

    The latent fields are pooled across members to build the ECDF, mapped
    through the gamma quantile function (zero where latent ``Y <= 0``) and
    tapered around each hour's centre.
    """
    E = model.config.ensemble_size if n_members is None else int(n_members)
    if E < 1:
        raise InputError("ensemble size must be >= 1")
    with stage("simulate"):
        Y = simulate_latent(model, track, grid, E, seed, stochastic, threads)
        pos = Y[Y > 0]
        if pos.size == 0:
            raise NumericalError("no positive latent values in the ensemble (degenerate storm)")
        P = anamorphose(Y, Ecdf(pos), model.gamma)
        if taper:
            P *= taper_stack(track, grid, model.config)[None]
    if return_array:
        return P
    return [FieldStack(grid, track.times, P[e], "mm/hr", land_mask) for e in range(E)]


def taper_stack(track, grid, cfg):
    return np.stack([taper_weights(grid, track.centers[t], track.rmax_km[t], cfg.taper_alpha, cfg.taper_beta)
                     for t in range(len(track))])


def cross_validate(events, cfg=FitConfig(), n_members=None, pixels=None, event_ids=None, threads=1,
                   keep_ensembles=False):
    """Leave-one-storm-out validation.

    Returns one dict per held-out event with its verification report (and the
    ensemble array when ``keep_ensembles`` is set).
    """
    if len(events) < 3:
        raise InputError("cross-validation needs at least three events")
    _check_events(events)
    ids = list(event_ids) if event_ids is not None else list(range(len(events)))
    E = cfg.ensemble_size if n_members is None else int(n_members)
    with stage("regrid"):
        Y = [polar_stack(s, tr, cfg, PolarGridSpec(), threads) for s, tr in events]
    out = []
    for h, (stack, track) in enumerate(events):
        train = [ev for k, ev in enumerate(events) if k != h]
        with stage(f"cv fold {ids[h]}"):
            model = fit_model(train, cfg, [i for k, i in enumerate(ids) if k != h], threads,
                              polar=[y for k, y in enumerate(Y) if k != h])
            ens = simulate_event(model, track, stack.grid, E, child_seed(cfg.seed, "cv", h),
                                 threads=threads, return_array=True)
            obs = stack.values * taper_stack(track, stack.grid, cfg)
            report = verification_report(ens, obs, stack.grid, pixels, child_seed(cfg.seed, "rank", h))
        fold = dict(held_out=ids[h], trained_on=[i for k, i in enumerate(ids) if k != h], report=report)
        if keep_ensembles:
            fold["ensemble"] = ens
            fold["obs"] = obs
        out.append(fold)
    return out


def summarize_cv(folds):
    """Combined JSON-ready report across folds."""
    briers = np.concatenate([f["report"]["brier_per_hour"] for f in folds])
    n_cells = [np.size(f["report"]["integrated"]["map_obs"]) * f["report"]["n_hours"] for f in folds]
    pooled = float(np.average([f["report"]["brier_mean"] for f in folds], weights=n_cells))
    edges = np.linspace(0, 1, 51)
    return dict(
        brier_mean=pooled,
        brier_histogram=dict(bin_width=0.02, counts=np.histogram(briers, edges)[0].tolist()),
        rank_histogram=np.sum([f["report"]["rank_histogram"] for f in folds], axis=0).tolist(),
        qq={str(f["held_out"]): f["report"]["qq"] for f in folds},
        integrated={str(f["held_out"]): f["report"]["integrated"] for f in folds},
        folds=folds,
    )
