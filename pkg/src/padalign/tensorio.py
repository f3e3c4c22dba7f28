"""Bit-exact tensor bundle files.

A bundle is a directory holding one binary file per tensor plus a JSON
manifest mapping names to files, shapes and roles. Each tensor file is:

    magic "PADT" | version u32 | rank u32 | dims u32 each | dtype u32 | payload

All integers and the float32 payload are little-endian; v1 carries float32
only. Attention-role tensors are checked row-stochastic on load, with a
looser tolerance than internal maps to absorb external 16-bit exports.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "ROLES",
    "TensorRecord",
    "BundleError",
    "BadMagicError",
    "VersionMismatchError",
    "ShapeMismatchError",
    "StochasticityError",
    "DuplicateNameError",
    "ManifestError",
    "write_bundle",
    "read_bundle",
    "dataset_to_bundle",
    "dataset_from_bundle",
]

MAGIC = b"PADT"
FORMAT_VERSION = 1
DTYPE_F32 = 1
ROLES = ("hidden", "attention", "tokens", "gold")
MANIFEST_NAME = "manifest.json"
ATTENTION_TOL = 1e-4

_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class BundleError(Exception):
    """Base error for bundle reading and writing."""


class BadMagicError(BundleError):
    pass


class VersionMismatchError(BundleError):
    pass


class ShapeMismatchError(BundleError):
    pass


class StochasticityError(BundleError):
    pass


class DuplicateNameError(BundleError):
    pass


class ManifestError(BundleError):
    pass


@dataclass
class TensorRecord:
    name: str
    data: np.ndarray
    role: str

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise BundleError(f"invalid tensor name {self.name!r}")
        if self.role not in ROLES:
            raise BundleError(f"unknown role {self.role!r}; valid: {', '.join(ROLES)}")


def _check_attention(name: str, arr: np.ndarray, tol: float) -> None:
    if arr.ndim < 2 or arr.shape[-1] != arr.shape[-2]:
        raise StochasticityError(f"{name}: attention tensor must end in n x n")
    if np.any(arr < -tol) or np.any(arr > 1 + tol):
        raise StochasticityError(f"{name}: attention entries outside [0, 1]")
    sums = np.sum(arr, axis=-1, dtype=np.float64)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > tol:
        raise StochasticityError(
            f"{name}: attention row sums deviate from 1 by {worst:.2e}")


def _write_tensor_file(path: Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<I", DTYPE_F32))
        fh.write(arr.tobytes(order="C"))


def _read_tensor_file(path: Path, expect_shape: Sequence[int]) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path.name}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path.name}: version {version}, expected {FORMAT_VERSION}")
    (rank,) = struct.unpack_from("<I", raw, 8)
    header_len = 12 + 4 * rank + 4
    if len(raw) < header_len:
        raise ShapeMismatchError(f"{path.name}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, 12) if rank else ()
    (dtype_code,) = struct.unpack_from("<I", raw, 12 + 4 * rank)
    if dtype_code != DTYPE_F32:
        raise VersionMismatchError(f"{path.name}: unsupported dtype code {dtype_code}")
    if tuple(dims) != tuple(expect_shape):
        raise ShapeMismatchError(
            f"{path.name}: header shape {tuple(dims)} vs manifest {tuple(expect_shape)}")
    count = int(np.prod(dims)) if dims else 1
    payload = raw[header_len:]
    if len(payload) != 4 * count:
        raise ShapeMismatchError(
            f"{path.name}: payload {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def write_bundle(records: Iterable[TensorRecord], path, meta: Mapping | None = None) -> Path:
    """Write tensors plus manifest into directory ``path`` (created if missing)."""
    records = list(records)
    names = [r.name for r in records]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise DuplicateNameError(f"duplicate tensor names: {sorted(dupes)}")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        fname = f"{rec.name}.padt"
        _write_tensor_file(root / fname, rec.data)
        entries.append({"name": rec.name, "file": fname,
                        "shape": [int(d) for d in rec.data.shape],
                        "dtype": "f32", "role": rec.role})
    manifest = {"format": "padt-bundle", "version": FORMAT_VERSION,
                "meta": dict(meta or {}), "tensors": entries}
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return root


def read_bundle(path) -> dict[str, TensorRecord]:
    """Load and validate every tensor in the bundle at ``path``."""
    root = Path(path)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise ManifestError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{mpath}: {e}") from e
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"manifest version {manifest.get('version')}, expected {FORMAT_VERSION}")
    out: dict[str, TensorRecord] = {}
    for entry in manifest.get("tensors", []):
        name, role = entry["name"], entry["role"]
        if name in out:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        arr = _read_tensor_file(root / entry["file"], entry["shape"])
        if role == "attention":
            _check_attention(name, arr, ATTENTION_TOL)
        out[name] = TensorRecord(name=name, data=arr, role=role)
    return out


def bundle_meta(path) -> dict:
    mpath = Path(path) / MANIFEST_NAME
    if not mpath.is_file():
        raise ManifestError(f"no {MANIFEST_NAME} in {path}")
    return json.loads(mpath.read_text()).get("meta", {})


def dataset_to_bundle(dataset, path) -> Path:
    """Serialize a synthetic dataset (examples + prototypes) as a bundle."""
    from dataclasses import asdict

    records = [TensorRecord("prototypes", dataset.prototypes, "hidden")]
    for i, ex in enumerate(dataset.examples):
        records.append(TensorRecord(f"ex{i:05d}.text", ex.text.astype(np.float32), "tokens"))
        records.append(TensorRecord(f"ex{i:05d}.speech", ex.speech, "hidden"))
        records.append(TensorRecord(f"ex{i:05d}.gold", ex.gold.astype(np.float32), "gold"))
    meta = {"kind": "paired-dataset", "count": len(dataset.examples),
            "gen_config": asdict(dataset.config)}
    return write_bundle(records, path, meta=meta)


def dataset_from_bundle(path):
    from .synthdata import Dataset, GenConfig, PairedExample

    records = read_bundle(path)
    meta = bundle_meta(path)
    if meta.get("kind") != "paired-dataset":
        raise ManifestError(f"bundle at {path} is not a paired dataset")
    cfg_dict = dict(meta["gen_config"])
    cfg_dict["text_len"] = tuple(cfg_dict["text_len"])
    cfg_dict["repeats"] = tuple(cfg_dict["repeats"])
    cfg = GenConfig(**cfg_dict)
    examples = []
    for i in range(int(meta["count"])):
        key = f"ex{i:05d}"
        examples.append(PairedExample(
            text=records[f"{key}.text"].data.astype(np.int64),
            speech=records[f"{key}.speech"].data,
            gold=np.rint(records[f"{key}.gold"].data).astype(np.int64)))
    return Dataset(examples=examples, prototypes=records["prototypes"].data,
                   config=cfg)
