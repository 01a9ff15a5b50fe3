"""Time-series CSV and run-manifest files."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig

HEADER = ("t", "quantity", "index", "value")
QUANTITIES = ("P", "Tbar", "v", "Q", "S", "traj")
SERIES_FILE = "series.csv"
MANIFEST_FILE = "manifest.json"
SUMMARY_FILE = "summary.json"


def git_blob_hash(data: bytes) -> str:
    """Content hash computed the way git names blobs: sha1 of 'blob <len>\\0' + data."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def config_hash(cfg: RunConfig) -> str:
    """Hash of the validated config; the output directory does not take part."""
    doc = cfg.model_dump(mode="json")
    doc["output"].pop("dir", None)
    return git_blob_hash(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode())


def fmt(x: float) -> str:
    return "%.17g" % x


@dataclass
class SeriesWriter:
    """Accumulates (t, quantity, index, value) rows; rows are written sorted by t."""

    rows: list = field(default_factory=list)

    def add(self, quantity: str, times, values, labels) -> None:
        """``values`` is (len(times), len(labels)); one row per entry."""
        if quantity not in QUANTITIES:
            raise ValueError(f"unknown quantity {quantity!r}")
        values = np.asarray(values, dtype=float)
        times = np.asarray(times, dtype=float)
        if values.shape != (times.size, len(labels)):
            raise ValueError(f"{quantity}: values shape {values.shape} does not match "
                             f"({times.size}, {len(labels)})")
        for i, t in enumerate(times.tolist()):
            for j, lab in enumerate(labels):
                self.rows.append((t, quantity, str(lab), float(values[i, j])))

    def add_rows(self, quantity: str, rows) -> None:
        for t, lab, val in rows:
            self.rows.append((float(t), quantity, str(lab), float(val)))

    def write(self, path, content_hash: str) -> None:
        # stable sort keeps insertion order within a time, so the file is deterministic
        rows = sorted(self.rows, key=lambda r: r[0])
        with open(path, "w", newline="") as fh:
            fh.write(f"# config-hash {content_hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            for t, q, idx, v in rows:
                w.writerow((fmt(t), q, idx, fmt(v)))


@dataclass(frozen=True, eq=False)
class Series:
    """Rows of one CSV, column arrays."""

    t: np.ndarray
    quantity: np.ndarray
    index: np.ndarray
    value: np.ndarray
    config_hash: str

    def select(self, quantity: str):
        """(times, index labels, values[time, label]) for one quantity on its full grid."""
        sel = self.quantity == quantity
        if not np.any(sel):
            raise KeyError(f"quantity {quantity!r} not present")
        t, idx, val = self.t[sel], self.index[sel], self.value[sel]
        times = np.unique(t)
        labels = list(dict.fromkeys(idx.tolist()))
        col = {lab: j for j, lab in enumerate(labels)}
        out = np.full((times.size, len(labels)), np.nan)
        ti = np.searchsorted(times, t)
        out[ti, [col[x] for x in idx.tolist()]] = val
        return times, labels, out


def read_series(path) -> Series:
    path = Path(path)
    if path.is_dir():
        path = path / SERIES_FILE
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# config-hash "):
            raise ValueError(f"{path}: missing config-hash line")
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(r)
    if rows:
        t, q, idx, v = zip(*rows)
    else:
        t = q = idx = v = ()
    return Series(np.array(t, dtype=float), np.array(q, dtype=object), np.array(idx, dtype=object),
                  np.array(v, dtype=float), first.split()[-1])


def versions() -> dict:
    import numpy
    import pydantic
    import scipy

    from . import __version__, _backend
    return {"bbbtraj": __version__, "backend": _backend.BACKEND, "python": platform.python_version(),
            "numpy": numpy.__version__, "scipy": scipy.__version__, "pydantic": pydantic.__version__}


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def write_manifest(outdir, cfg: RunConfig, content_hash: str, wall_time: float) -> None:
    """Config echo, content hash, seed, versions and wall time.

    Wall time is the only field that changes between identical reruns.
    """
    write_json(Path(outdir) / MANIFEST_FILE, {
        "config": cfg.model_dump(mode="json"), "hash": content_hash, "seed": cfg.seed,
        "versions": versions(), "wall_time": wall_time,
    })
