"""Multi-view datasets: validation, manifests on disk, normalization, synthetic blobs."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import RngStream


class DatasetError(ValueError):
    pass


@dataclass
class MultiViewDataset:
    views: list[np.ndarray]
    labels: np.ndarray | None = None
    n_classes: int | None = None
    name: str = "dataset"

    def __post_init__(self):
        self.views = [np.asarray(v) for v in self.views]
        validate(self)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.n_classes is None:
                self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def n_samples(self) -> int:
        return self.views[0].shape[0]

    @property
    def dims(self) -> list[int]:
        return [v.shape[1] for v in self.views]

    def subset(self, idx) -> "MultiViewDataset":
        labels = None if self.labels is None else self.labels[idx]
        return MultiViewDataset([v[idx] for v in self.views], labels, self.n_classes, self.name)

    def concatenated(self) -> np.ndarray:
        return np.concatenate(self.views, axis=1)


def validate(ds: MultiViewDataset) -> None:
    if not ds.views:
        raise DatasetError("dataset has no views")
    rows = [v.shape[0] if v.ndim == 2 else None for v in ds.views]
    for m, v in enumerate(ds.views):
        if v.ndim != 2:
            raise DatasetError(f"view {m} must be a 2-D matrix, got shape {v.shape}")
        if v.shape[1] < 1:
            raise DatasetError(f"view {m} has no features")
    if len(set(rows)) != 1:
        raise DatasetError(f"views disagree on row count: {rows}")
    for m, v in enumerate(ds.views):
        bad = np.argwhere(~np.isfinite(v))
        if bad.size:
            r, c = bad[0]
            raise DatasetError(f"view {m} has a non-finite value at row {r}, col {c}")
    if ds.labels is not None:
        labels = np.asarray(ds.labels)
        if labels.shape != (rows[0],):
            raise DatasetError(f"labels have shape {labels.shape}, expected ({rows[0]},)")
        c = ds.n_classes
        if labels.size and (labels.min() < 0 or (c is not None and labels.max() >= c)):
            raise DatasetError(f"labels must lie in [0, {c}), got range "
                               f"[{labels.min()}, {labels.max()}]")


# ------------------------------------------------------------------- manifests

ENCODINGS = ("csv", "f32le-rowmajor")


def save_dataset(ds: MultiViewDataset, directory, encoding: str = "f32le-rowmajor",
                 normalization: str | None = None) -> Path:
    """Write views, labels and a JSON manifest; returns the manifest path."""
    if encoding not in ENCODINGS:
        raise DatasetError(f"unknown encoding {encoding!r}; use one of {ENCODINGS}")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for m, v in enumerate(ds.views):
        if encoding == "csv":
            fname = f"view{m}.csv"
            np.savetxt(out / fname, v, delimiter=",", fmt="%.17g")
        else:
            fname = f"view{m}.f32"
            np.ascontiguousarray(v, dtype="<f4").tofile(out / fname)
        entries.append({"file": fname, "rows": int(v.shape[0]), "cols": int(v.shape[1]),
                        "encoding": encoding})
    manifest = {"name": ds.name, "views": entries}
    if ds.labels is not None:
        np.savetxt(out / "labels.txt", ds.labels, fmt="%d")
        manifest["labels"] = "labels.txt"
        manifest["classes"] = int(ds.n_classes)
    if normalization:
        manifest["normalization"] = normalization
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _read_view(base: Path, entry: dict, m: int) -> np.ndarray:
    path = base / entry["file"]
    if not path.exists():
        raise DatasetError(f"view {m}: missing file {path}")
    rows, cols = int(entry["rows"]), int(entry["cols"])
    enc = entry.get("encoding", "csv")
    if enc == "csv":
        data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        if data.size == 0:
            data = data.reshape(0, cols)
    elif enc == "f32le-rowmajor":
        expected = rows * cols * 4
        size = os.path.getsize(path)
        if size != expected:
            raise DatasetError(f"view {m}: {path} holds {size} bytes, "
                               f"manifest declares {rows}x{cols} float32 ({expected} bytes)")
        data = np.fromfile(path, dtype="<f4").reshape(rows, cols)
    else:
        raise DatasetError(f"view {m}: unknown encoding {enc!r}")
    if data.shape != (rows, cols):
        raise DatasetError(f"view {m}: {path} has shape {data.shape}, "
                           f"manifest declares ({rows}, {cols})")
    return data


def load_dataset(manifest_path) -> MultiViewDataset:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"missing manifest {manifest_path}")
    spec = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    views = [_read_view(base, e, m) for m, e in enumerate(spec["views"])]
    rows = [v.shape[0] for v in views]
    if len(set(rows)) != 1:
        raise DatasetError(f"views disagree on row count: {rows}")
    labels, classes = None, spec.get("classes")
    if spec.get("labels"):
        lpath = base / spec["labels"]
        if not lpath.exists():
            raise DatasetError(f"missing labels file {lpath}")
        labels = np.loadtxt(lpath, dtype=np.int64, ndmin=1)
    ds = MultiViewDataset(views, labels, classes, spec.get("name", manifest_path.stem))
    mode = spec.get("normalization")
    return normalize(ds, mode) if mode else ds


# --------------------------------------------------------------- normalization

def normalize(ds: MultiViewDataset, mode: str = "zscore") -> MultiViewDataset:
    """Per-feature transform of every view; constant features map to 0."""
    if mode in (None, "none"):
        return ds
    out = []
    for v in ds.views:
        v = np.asarray(v, dtype=np.float64)
        if mode == "zscore":
            mu = v.mean(axis=0)
            sd = v.std(axis=0)
            safe = np.where(sd > 0, sd, 1.0)
            out.append(np.where(sd > 0, (v - mu) / safe, 0.0))
        elif mode == "minmax":
            lo, hi = v.min(axis=0), v.max(axis=0)
            span = hi - lo
            safe = np.where(span > 0, span, 1.0)
            out.append(np.where(span > 0, (v - lo) / safe, 0.0))
        else:
            raise DatasetError(f"unknown normalization {mode!r}; use none, zscore or minmax")
    return MultiViewDataset(out, ds.labels, ds.n_classes, ds.name)


# ------------------------------------------------------------------- synthetic

@dataclass
class SynthSpec:
    dims: list[int] = field(default_factory=lambda: [20, 50, 10])
    n: int = 500
    k: int = 5
    spread: float | list[float] = 2.0
    separation: float = 6.0
    seed: int = 0
    preset: str = "blobs"

    def __post_init__(self):
        if self.preset != "blobs":
            raise DatasetError(f"unknown synthetic preset {self.preset!r}")
        if self.k < 2:
            raise DatasetError(f"need k >= 2 classes, got {self.k}")
        if self.n < self.k:
            raise DatasetError(f"need N >= k, got N={self.n}, k={self.k}")
        if not self.dims or any(d < 1 for d in self.dims):
            raise DatasetError(f"view dimensions must be positive, got {self.dims}")

    def spreads(self) -> list[float]:
        if isinstance(self.spread, (list, tuple)):
            if len(self.spread) != len(self.dims):
                raise DatasetError("per-view spread list must match the number of views")
            return [float(s) for s in self.spread]
        return [float(self.spread)] * len(self.dims)


def _centers(k: int, dim: int, sep: float, rng: RngStream, attempts: int = 1000) -> np.ndarray:
    # scale puts typical pairwise distances near sqrt(2) * sep
    scale = sep / np.sqrt(dim)
    centers = []
    for _ in range(k):
        for _ in range(attempts):
            c = rng.normal(scale, dim)
            if all(np.linalg.norm(c - o) >= sep for o in centers):
                centers.append(c)
                break
        else:
            raise DatasetError(f"could not place {k} centers {sep} apart in "
                               f"{dim} dimensions after {attempts} attempts")
    return np.array(centers)


def make_blobs(spec: SynthSpec) -> MultiViewDataset:
    """Gaussian blobs per view around class centers at least ``separation`` apart."""
    rng = RngStream(spec.seed, ("blobs",))
    # every class appears at least once; the rest are assigned uniformly
    labels = np.concatenate([np.arange(spec.k), rng.integers(0, spec.k, spec.n - spec.k)])
    labels = labels[rng.permutation(spec.n)]
    views = []
    for dim, spread in zip(spec.dims, spec.spreads()):
        centers = _centers(spec.k, dim, spec.separation, rng)
        views.append(centers[labels] + rng.normal(spread, (spec.n, dim)))
    return MultiViewDataset(views, labels, spec.k, "blobs")


def parse_synth(text: str) -> SynthSpec:
    """Parse ``blobs[:key=value,...]``; dims and spread lists use ``/`` separators."""
    preset, _, rest = text.partition(":")
    kwargs: dict = {"preset": preset}
    aliases = {"D": "dims", "N": "n", "sep": "separation"}
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        key = aliases.get(key.strip(), key.strip())
        if key == "dims":
            kwargs[key] = [int(x) for x in val.split("/")]
        elif key == "spread":
            parts = [float(x) for x in val.split("/")]
            kwargs[key] = parts if len(parts) > 1 else parts[0]
        elif key in ("n", "k", "seed"):
            kwargs[key] = int(val)
        elif key == "separation":
            kwargs[key] = float(val)
        else:
            raise DatasetError(f"unknown synthetic option {key!r}")
    return SynthSpec(**kwargs)
