"""Command-line entry point.

Subcommands: ``synth``, ``extract-track``, ``fit``, ``simulate``, ``cv`` and
``verify``. Every subcommand accepts ``--seed``, ``--threads`` and
``--config FILE`` (a JSON object keyed by long option names with dashes
replaced by underscores; explicit flags win over the file).

Exit status is 0 on success, 1 for input, format or usage errors and 2 for
numerical failures. Outputs created by a failing command are removed.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import FieldStack, FormatError, InputError, NumericalError
from .io import read_field_stack, read_grid, read_track, write_field_stack, write_grid, write_track
from .model import FitConfig, load_model, save_model
from .pipeline import cross_validate, fit_model, simulate_event, stage, summarize_cv, taper_stack
from .synth import default_grid, land_mask_for, make_vortex_event, storm_set_params
from .trackextract import extract_track
from .verify import check_report, verification_report, write_csvs

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

# FitConfig field -> (flag, type, help)
MODEL_FLAGS = {
    "n_eofs": (int, "number of retained EOFs (default 13)"),
    "center_eofs": (None, "demean grid nodes before the SVD"),
    "n_trees": (int, "trees per random forest (default 500)"),
    "mtry": (int, "features tried per split (default 3)"),
    "min_node": (int, "minimum terminal node size (default 5)"),
    "n_harmonics": (int, "circular harmonics M (default 10)"),
    "krige_range": (float, "exponential covariance range in chart units (default 2.0)"),
    "krige_neighbors": (int, "kriging neighbourhood size (default 16)"),
    "krige_nugget": (float, "nugget as a fraction of the sill (default 1e-6)"),
    "taper_alpha": (float, "taper inner radius in Rmax units (default 4)"),
    "taper_beta": (float, "taper outer radius in Rmax units (default 8)"),
    "ensemble_size": (int, "default number of members (default 100)"),
}

SYNTH_DEFAULTS = dict(n_events=7, duration_h=48, grid_n=30, spacing=0.33, lon0=-98.0, lat0=21.0,
                      noise=0.3, dry_threshold=0.3)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


class Outputs:
    """Track files and directories a command creates so a failure can undo them."""

    def __init__(self):
        self.paths = []

    def dir(self, path):
        p = Path(path)
        if p.exists() and not p.is_dir():
            raise InputError(f"output path exists and is not a directory: {p}")
        if not p.exists():
            p.mkdir(parents=True)
            self.paths.append(p)
        return p

    def file(self, path):
        p = Path(path)
        if p.parent and not p.parent.exists():
            self.dir(p.parent)
        self.paths.append(p)
        return p

    def files_in(self, directory, names):
        for n in names:
            self.paths.append(Path(directory) / n)

    def rollback(self):
        for p in reversed(self.paths):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()


def _write_json(outputs, path, obj):
    p = outputs.file(path)
    p.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable))
    return p


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _stack_out(outputs, directory, name, stack):
    outputs.files_in(directory, [f"{name}.json", f"{name}.f64", f"{name}.mask.u8"])
    write_field_stack(stack, Path(directory) / f"{name}.json")
    return f"{name}.json"


# --------------------------------------------------------------------------- parsing

def _common(p):
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=int, default=None, help="root random seed (default 0)")
    g.add_argument("--threads", type=int, default=None, help="worker threads; results do not depend on it")
    g.add_argument("--config", default=None, help="JSON file with option defaults (flags win)")


def _model_flags(p):
    g = p.add_argument_group("model options")
    for name, (typ, text) in MODEL_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        if typ is None:
            g.add_argument(flag, action="store_true", default=None, help=text)
        else:
            g.add_argument(flag, type=typ, default=None, help=text)


def build_parser():
    top = _Parser(prog="tcprecip", description="Storm-centred stochastic precipitation generator.")
    top.add_argument("--version", action="version", version=f"tcprecip {__version__}")
    sub = top.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a set of synthetic storms",
                       description="Generate analytic synthetic storms. The config JSON may set "
                                   + ", ".join(sorted(SYNTH_DEFAULTS)) + ". Writes grid.json, "
                                   "per-event u/v/p/precip stacks and track CSVs, and manifest.json.")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-events", type=int, default=None)
    p.add_argument("--duration-h", type=int, default=None)
    p.add_argument("--noise", type=float, default=None, help="multiplicative rain noise CV (0 for noise free)")
    _common(p)

    p = sub.add_parser("extract-track", help="derive a track from wind and pressure stacks",
                       description="Extract centres, Rmax, pressure deficit, motion and distance to "
                                   "coast from 850 hPa winds and surface pressure.")
    for flag, text in (("--u", "zonal wind stack manifest"), ("--v", "meridional wind stack manifest"),
                       ("--p", "surface pressure stack manifest (hPa)"),
                       ("--ref", "reference track CSV (first-guess centres)"), ("--out", "output track CSV")):
        p.add_argument(flag, required=True, help=text)
    p.add_argument("--bandwidth", type=float, default=None, help="smoothing bandwidth in cells (1.5)")
    p.add_argument("--window-deg", type=float, default=None, help="centre search half-width (2.0)")
    p.add_argument("--lam", type=float, default=None, help="spline penalty (default: GCV)")
    p.add_argument("--grid-centers", action="store_true", default=None,
                   help="keep grid-registered centres (no sub-cell refinement)")
    _common(p)

    p = sub.add_parser("fit", help="fit the model to training events",
                       description="Fit EOFs, forests, AR(1) residuals, the circular residual model and "
                                   "the gamma marginal. The events manifest is "
                                   '{"events": [{"id": ..., "precip": stack.json, "track": track.csv}]}.')
    p.add_argument("--events", required=True, help="events manifest JSON")
    p.add_argument("--out", required=True, help="model output directory")
    _model_flags(p)
    _common(p)

    p = sub.add_parser("simulate", help="simulate an ensemble for one track",
                       description="Write one field stack per member plus ensemble.json.")
    p.add_argument("--model", required=True, help="fitted model directory")
    p.add_argument("--track", required=True, help="track CSV")
    p.add_argument("--grid", required=True, help="grid JSON (optional inline land_mask)")
    p.add_argument("--n", type=int, default=None, help="ensemble size (model default)")
    p.add_argument("--no-taper", action="store_true", default=None, help="skip the storm-centred taper")
    p.add_argument("--out", required=True, help="output directory")
    _common(p)

    p = sub.add_parser("cv", help="leave-one-storm-out cross-validation",
                       description="Fit on all events but one, simulate the held-out track and verify; "
                                   "repeat for every event.")
    p.add_argument("--events", required=True, help="events manifest JSON")
    p.add_argument("--n", type=int, default=None, help="ensemble size")
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--csv-dir", default=None, help="also write plot-ready CSVs here")
    _model_flags(p)
    _common(p)

    p = sub.add_parser("verify", help="verify a simulated ensemble against observations",
                       description="Compare a 'simulate' output directory with an observed stack.")
    p.add_argument("--ensemble", required=True, help="directory written by 'simulate'")
    p.add_argument("--obs", required=True, help="observed precipitation stack manifest")
    p.add_argument("--track", default=None, help="track CSV; if given the taper is applied to obs")
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--csv-dir", default=None, help="also write plot-ready CSVs here")
    p.add_argument("--taper-alpha", type=float, default=None)
    p.add_argument("--taper-beta", type=float, default=None)
    _common(p)
    return top


def _resolve(args):
    """Fill unset options from ``--config`` then from built-in defaults."""
    conf = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            conf = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(conf, dict):
            raise FormatError(f"{path}: config must be a JSON object")
    known = set(vars(args))
    if args.command == "synth":
        known |= set(SYNTH_DEFAULTS)
    unknown = sorted(set(conf) - known - {"config", "command"})
    if unknown:
        raise FormatError(f"unknown config key(s): {', '.join(unknown)}")
    for k, v in conf.items():
        if getattr(args, k, None) is None:
            setattr(args, k, v)
    if args.seed is None:
        args.seed = 0
    if args.threads is None:
        args.threads = 1
    if args.threads < 1:
        raise InputError(f"--threads must be >= 1, got {args.threads}")
    args._conf = conf
    return args


def _fit_config(args):
    base = FitConfig()
    kw = {f.name: getattr(args, f.name, None) for f in fields(FitConfig) if f.name != "seed"}
    if args.center_eofs is None:
        kw["center_eofs"] = base.center_eofs
    return base.replace(seed=args.seed, **kw)


def _read_events(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"events manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    entries = doc.get("events") if isinstance(doc, dict) else None
    if not isinstance(entries, list) or not entries:
        raise FormatError(f"{path}: expected a non-empty 'events' list")
    events, ids = [], []
    for k, e in enumerate(entries):
        if "precip" not in e or "track" not in e:
            raise FormatError(f"{path}: event {k} needs 'precip' and 'track'")
        events.append((read_field_stack(path.parent / e["precip"]), read_track(path.parent / e["track"])))
        ids.append(e.get("id", k))
    return events, ids


# --------------------------------------------------------------------------- commands

def cmd_synth(args, out):
    cfg = {k: getattr(args, k, None) for k in SYNTH_DEFAULTS}
    cfg = {k: (SYNTH_DEFAULTS[k] if v is None else v) for k, v in cfg.items()}
    grid = default_grid(int(cfg["grid_n"]), float(cfg["spacing"]), float(cfg["lon0"]), float(cfg["lat0"]))
    params = storm_set_params(int(cfg["n_events"]), grid, int(cfg["duration_h"]), args.seed,
                              noise=float(cfg["noise"]), dry_threshold=float(cfg["dry_threshold"]))
    d = out.dir(args.out)
    p = out.file(d / "grid.json")
    write_grid(grid, p, land_mask_for(grid))
    seeds = np.random.SeedSequence(args.seed).spawn(len(params))
    entries = []
    for k, (prm, ss) in enumerate(zip(params, seeds)):
        ev = make_vortex_event(prm, ss)
        name = f"event{k:02d}"
        entry = dict(id=name)
        for var in ("u", "v", "p", "precip"):
            entry[var] = _stack_out(out, d, f"{name}_{var}", getattr(ev, var))
        entry["track"] = f"{name}_track.csv"
        write_track(ev.track, out.file(d / entry["track"]))
        entries.append(entry)
    _write_json(out, d / "manifest.json", dict(events=entries, synth=cfg, seed=args.seed))


def cmd_extract_track(args, out):
    u, v, p = (read_field_stack(x) for x in (args.u, args.v, args.p))
    ref = read_track(args.ref)
    kw = dict(reference=ref)
    if args.bandwidth is not None:
        kw["bandwidth_cells"] = args.bandwidth
    if args.window_deg is not None:
        kw["window_deg"] = args.window_deg
    with stage("extract-track"):
        track = extract_track(u, v, p, lam=args.lam, subgrid=not args.grid_centers, **kw)
    write_track(track, out.file(args.out))


def cmd_fit(args, out):
    events, ids = _read_events(args.events)
    cfg = _fit_config(args)
    model = fit_model(events, cfg, ids, args.threads)
    d = out.dir(args.out)
    out.files_in(d, ["model.json"])
    before = set(d.iterdir())
    try:
        save_model(model, d)
    finally:
        out.paths.extend(set(d.iterdir()) - before)


def cmd_simulate(args, out):
    with stage("load"):
        model = load_model(args.model)
        track = read_track(args.track)
        grid, mask = read_grid(args.grid)
    n = model.config.ensemble_size if args.n is None else args.n
    ens = simulate_event(model, track, grid, n, args.seed, taper=not args.no_taper, land_mask=mask,
                         threads=args.threads)
    d = out.dir(args.out)
    members = [_stack_out(out, d, f"member{e:03d}", s) for e, s in enumerate(ens)]
    _write_json(out, d / "ensemble.json", dict(members=members, seed=args.seed, n_members=n,
                                                tapered=not args.no_taper))


def cmd_cv(args, out):
    events, ids = _read_events(args.events)
    cfg = _fit_config(args)
    folds = cross_validate(events, cfg, args.n, event_ids=ids, threads=args.threads)
    summary = summarize_cv(folds)
    summary["config"] = asdict(cfg)
    for f in folds:
        check_report(f["report"])
    _write_json(out, args.report, summary)
    if args.csv_dir:
        d = out.dir(args.csv_dir)
        for f in folds:
            before = set(d.iterdir())
            write_csvs(f["report"], d, prefix=f"{f['held_out']}_")
            out.paths.extend(set(d.iterdir()) - before)


def cmd_verify(args, out):
    d = Path(args.ensemble)
    meta_path = d / "ensemble.json"
    if not meta_path.exists():
        raise InputError(f"ensemble manifest not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    members = [read_field_stack(d / m) for m in meta["members"]]
    obs = read_field_stack(args.obs)
    if any(m.values.shape != obs.values.shape for m in members):
        raise InputError("ensemble members and observations have different shapes")
    o = obs.values
    if args.track:
        cfg = FitConfig().replace(taper_alpha=args.taper_alpha, taper_beta=args.taper_beta)
        o = o * taper_stack(read_track(args.track), obs.grid, cfg)
    with stage("verify"):
        report = verification_report(np.stack([m.values for m in members]), o, obs.grid, seed=args.seed)
        check_report(report)
    _write_json(out, args.report, report)
    if args.csv_dir:
        cd = out.dir(args.csv_dir)
        before = set(cd.iterdir())
        write_csvs(report, cd)
        out.paths.extend(set(cd.iterdir()) - before)


COMMANDS = {"synth": cmd_synth, "extract-track": cmd_extract_track, "fit": cmd_fit,
            "simulate": cmd_simulate, "cv": cmd_cv, "verify": cmd_verify}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    out = Outputs()
    label = args.command
    try:
        _resolve(args)
        COMMANDS[args.command](args, out)
    except NumericalError as exc:
        out.rollback()
        print(f"tcprecip {label}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, OSError, KeyError, TypeError, ValueError) as exc:
        out.rollback()
        kind = "input error" if isinstance(exc, (InputError, OSError)) else "format error"
        print(f"tcprecip {label}: {kind}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BaseException:
        out.rollback()
        raise
    return EXIT_OK


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
