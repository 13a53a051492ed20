"""Manifest + raw-array directory format.

A dataset or checkpoint directory holds ``manifest.json`` and one ``.f32``
file per array: little-endian float32, row-major, with shape and sha256
recorded in the manifest. Everything non-numeric (ids, seeds, configs) lives
in the manifest itself.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import IntegrityError

MANIFEST = "manifest.json"
DTYPE = np.dtype("<f4")


def to_f32(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a), dtype=DTYPE)


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def write_array(root: Path, name: str, array) -> dict:
    a = to_f32(array)
    raw = a.tobytes(order="C")
    fname = f"{name}.f32"
    tmp = root / (fname + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(raw)
    os.replace(tmp, root / fname)
    return {"file": fname, "shape": list(a.shape), "dtype": "<f4", "sha256": hashlib.sha256(raw).hexdigest()}


def read_array(root: Path, entry: dict) -> np.ndarray:
    path = Path(root) / entry["file"]
    if not path.exists():
        raise FileNotFoundError(f"array file missing: {path}")
    shape = tuple(entry["shape"])
    raw = path.read_bytes()
    expected = int(np.prod(shape, dtype=np.int64)) * DTYPE.itemsize
    if len(raw) != expected:
        raise IntegrityError(f"{path.name}: {len(raw)} bytes on disk, manifest shape {shape} needs {expected}")
    sha = entry.get("sha256")
    if sha is not None and hashlib.sha256(raw).hexdigest() != sha:
        raise IntegrityError(f"{path.name}: checksum mismatch")
    return np.frombuffer(raw, dtype=DTYPE).reshape(shape).copy()


def write_manifest(root: Path, manifest: dict) -> None:
    root = Path(root)
    tmp = root / (MANIFEST + ".tmp")
    tmp.write_text(dumps(manifest), encoding="utf-8")
    os.replace(tmp, root / MANIFEST)


def read_manifest(root: Path) -> dict:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    return json.loads(path.read_text(encoding="utf-8"))
