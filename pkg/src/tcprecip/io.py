"""Reading and writing field stacks (JSON manifest + raw float64 blob) and
track CSV files."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .core import TRACK_COLUMNS, FieldStack, FormatError, GridSpec, InputError, StormTrack

FORMAT_VERSION = 1


def _iso(times):
    return [str(t) for t in np.asarray(times, dtype="datetime64[s]")]


def write_field_stack(stack, path):
    """Write ``stack`` as ``<name>.json`` plus ``<name>.f64`` (and mask blob)."""
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    name = path.stem
    data_name = name + ".f64"
    manifest = dict(format_version=FORMAT_VERSION, n_t=int(stack.n_t), **stack.grid.to_dict(),
                    units=stack.units, times=_iso(stack.times), data=data_name,
                    has_mask=stack.land_mask is not None)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(stack.values, dtype="<f8").tofile(path.parent / data_name)
    if stack.land_mask is not None:
        manifest["mask"] = name + ".mask.u8"
        np.ascontiguousarray(stack.land_mask, dtype=np.uint8).tofile(path.parent / manifest["mask"])
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def read_field_stack(path):
    path = Path(path)
    if not path.exists():
        raise FormatError(f"manifest not found: {path}")
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    for key in ("n_lon", "n_lat", "n_t", "lon0", "lat0", "d_lon", "d_lat", "times", "data"):
        if key not in m:
            raise FormatError(f"{path}: manifest missing '{key}'")
    if m.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {m['format_version']}")
    try:
        grid = GridSpec.from_dict(m)
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from None
    n_t = int(m["n_t"])
    if len(m["times"]) != n_t:
        raise FormatError(f"{path}: {len(m['times'])} timestamps for n_t={n_t}")
    blob = path.parent / m["data"]
    if not blob.exists():
        raise FormatError(f"data blob not found: {blob}")
    expected = n_t * grid.n_lat * grid.n_lon * 8
    actual = os.path.getsize(blob)
    if actual != expected:
        raise FormatError(f"{blob}: expected {expected} bytes, found {actual}")
    values = np.fromfile(blob, dtype="<f8").reshape(n_t, grid.n_lat, grid.n_lon)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"{blob}: non-finite value at index {tuple(int(i) for i in bad[0])}")
    mask = None
    if m.get("has_mask"):
        mblob = path.parent / m.get("mask", path.stem + ".mask.u8")
        if not mblob.exists():
            raise FormatError(f"mask blob not found: {mblob}")
        raw = np.fromfile(mblob, dtype=np.uint8)
        if raw.size != grid.n_lat * grid.n_lon:
            raise FormatError(f"{mblob}: expected {grid.n_lat * grid.n_lon} bytes, found {raw.size}")
        mask = raw.reshape(grid.shape).astype(bool)
    try:
        times = np.array(m["times"], dtype="datetime64[s]")
    except ValueError as exc:
        raise FormatError(f"{path}: bad timestamp ({exc})") from None
    steps = np.diff(times).astype(np.int64)
    bad = np.flatnonzero(steps != 3600)
    if bad.size:
        raise FormatError(f"{path}: timestamps not hourly at index {bad[0] + 1}")
    try:
        return FieldStack(grid, times, values, units=m.get("units", "mm/hr"), land_mask=mask)
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_track(track, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_COLUMNS)
        cols = [getattr(track, c) for c in TRACK_COLUMNS[1:]]
        for i, t in enumerate(_iso(track.times)):
            w.writerow([t] + [f"{c[i]:.6f}" for c in cols])
    return path


def read_track(path):
    path = Path(path)
    if not path.exists():
        raise FormatError(f"track file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty track file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in TRACK_COLUMNS if c not in header]
    if missing:
        raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
    idx = [header.index(c) for c in TRACK_COLUMNS]
    cols = {c: [] for c in TRACK_COLUMNS}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            cols["time"].append(np.datetime64(row[idx[0]].strip(), "s"))
            for c, j in zip(TRACK_COLUMNS[1:], idx[1:]):
                cols[c].append(float(row[j]))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from None
    try:
        return StormTrack(**{("times" if c == "time" else c): np.array(v) for c, v in cols.items()})
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_grid(grid, path, land_mask=None):
    """Grid JSON used by the ``simulate`` command (optional mask inline)."""
    d = grid.to_dict()
    if land_mask is not None:
        d["land_mask"] = np.asarray(land_mask, dtype=np.uint8).tolist()
    Path(path).write_text(json.dumps(d, indent=1))


def read_grid(path):
    path = Path(path)
    if not path.exists():
        raise FormatError(f"grid file not found: {path}")
    d = json.loads(path.read_text())
    try:
        grid = GridSpec.from_dict(d)
    except (KeyError, InputError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    mask = np.asarray(d["land_mask"], dtype=bool) if "land_mask" in d else None
    return grid, mask
