"""Fitted model container and its on-disk layout (``model.json`` plus one raw
little-endian float64 blob per array)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .ar1 import Ar1Params
from .circular import ResidualModel
from .core import FormatError, PolarGridSpec
from .eof import EofBasis
from .marginal import GammaParams
from .regrid import KrigeConfig
from .rforest import Forest

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    n_eofs: int = 13
    center_eofs: bool = False
    n_trees: int = 500
    mtry: int = 3
    min_node: int = 5
    n_harmonics: int = 10
    krige_range: float = 2.0
    krige_nugget: float = 1e-6
    krige_neighbors: int = 16
    taper_alpha: float = 4.0
    taper_beta: float = 8.0
    ensemble_size: int = 100
    seed: int = 0

    @property
    def krige(self):
        return KrigeConfig(self.krige_range, self.krige_nugget, self.krige_neighbors)

    def replace(self, **kw):
        d = asdict(self)
        d.update({k: v for k, v in kw.items() if v is not None})
        return FitConfig(**d)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise FormatError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: PolarGridSpec
    basis: EofBasis
    forests: list
    ar: list
    residual: ResidualModel
    gamma: GammaParams
    config: FitConfig
    meta: dict = field(default_factory=dict)

    @property
    def L(self):
        return self.basis.L

    def check(self):
        """Raise ``AssertionError`` if a structural invariant is violated."""
        L = self.L
        assert L >= 1 and len(self.forests) == L and len(self.ar) == L
        G = self.basis.patterns @ self.basis.patterns.T
        assert np.allclose(G, np.eye(L), atol=1e-8)
        assert all(abs(p.phi) < 1 and p.sigma2 >= 0 for p in self.ar)
        assert abs(self.residual.phi_bar) < 1
        n = self.spec.n_r
        for C, j in zip(self.residual.stacked(), self.residual.jitter):
            assert np.allclose(C, C.T)
            if np.trace(C) > 0:
                np.linalg.cholesky(C + j * np.eye(n))
        assert self.gamma.shape > 0 and self.gamma.rate > 0


def _blob(out, name, arr, index):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    arr.tofile(out / f"{name}.f64")
    index[name] = dict(file=f"{name}.f64", shape=list(arr.shape))


def save_model(model, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blobs = {}
    b = model.basis
    _blob(out, "eof_patterns", b.patterns, blobs)
    _blob(out, "eof_singular_values", b.all_singular_values, blobs)
    if b.mean is not None:
        _blob(out, "eof_mean", b.mean, blobs)
    for l, f in enumerate(model.forests):
        for k, v in f.tables().items():
            _blob(out, f"forest{l:02d}_{k}", v, blobs)
    r = model.residual
    _blob(out, "resid_cov0", r.cov0, blobs)
    _blob(out, "resid_cov1", r.cov1, blobs)
    _blob(out, "resid_cov2", r.cov2, blobs)
    _blob(out, "resid_jitter", r.jitter, blobs)
    doc = dict(
        format_version=MODEL_FORMAT_VERSION,
        polar=asdict(model.spec),
        L=model.L,
        eof_total_variance=b.total_variance,
        forests=[dict(n_features=f.n_features, mtry=f.mtry, min_node=f.min_node,
                      seed=f.seed, bootstrap=f.bootstrap) for f in model.forests],
        ar=[dict(phi=p.phi, sigma2=p.sigma2) for p in model.ar],
        phi_bar=r.phi_bar,
        n_harmonics=r.M,
        gamma=dict(shape=model.gamma.shape, rate=model.gamma.rate),
        config=asdict(model.config),
        meta=model.meta,
        blobs=blobs,
    )
    (out / "model.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return out


def load_model(model_dir):
    src = Path(model_dir)
    path = src / "model.json"
    if not path.exists():
        raise FormatError(f"model file not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {doc.get('format_version')}")
    index = doc["blobs"]

    def arr(name, dtype=np.float64):
        meta = index[name]
        f = src / meta["file"]
        if not f.exists():
            raise FormatError(f"model blob not found: {f}")
        raw = np.fromfile(f, dtype="<f8")
        if raw.size != int(np.prod(meta["shape"])):
            raise FormatError(f"{f}: expected {int(np.prod(meta['shape'])) * 8} bytes, found {raw.size * 8}")
        return raw.reshape(meta["shape"]).astype(dtype)

    spec = PolarGridSpec(**doc["polar"])
    L = int(doc["L"])
    allsv = arr("eof_singular_values")
    basis = EofBasis(spec, arr("eof_patterns"), allsv[:L].copy(), float(doc["eof_total_variance"]),
                     allsv, arr("eof_mean") if "eof_mean" in index else None)
    forests = []
    for l, fm in enumerate(doc["forests"]):
        t = {k: arr(f"forest{l:02d}_{k}", np.int64 if k in ("offsets", "feature", "left", "right", "n_node")
                    else np.float64)
             for k in ("offsets", "feature", "threshold", "left", "right", "value", "reduction", "n_node")}
        forests.append(Forest(fm["n_features"], fm["mtry"], fm["min_node"], fm["seed"], fm["bootstrap"], **t))
    residual = ResidualModel(spec, arr("resid_cov0"), arr("resid_cov1"), arr("resid_cov2"),
                             float(doc["phi_bar"]), arr("resid_jitter"))
    return FittedModel(spec, basis, forests, [Ar1Params(**p) for p in doc["ar"]], residual,
                       GammaParams(**doc["gamma"]), FitConfig.from_dict(doc["config"]), doc.get("meta", {}))
