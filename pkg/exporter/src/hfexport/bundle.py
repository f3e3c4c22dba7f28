"""Writer for padt tensor bundles (format v1).

Bundles are directories: one binary file per tensor plus a JSON manifest.
Tensor files are ``"PADT" | version u32 | rank u32 | dims u32.. | dtype u32``
followed by a row-major little-endian float32 payload. This module only
writes; the alignment engine consuming these bundles does the validated
reading.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"PADT"
FORMAT_VERSION = 1
DTYPE_F32 = 1
ROLES = ("hidden", "attention", "tokens", "gold")


def write_tensor_file(path: Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<I", DTYPE_F32))
        fh.write(arr.tobytes(order="C"))


def write_bundle(tensors: Iterable[tuple[str, np.ndarray, str]], path,
                 meta: Mapping | None = None) -> Path:
    tensors = list(tensors)
    names = [name for name, _, _ in tensors]
    if len(names) != len(set(names)):
        raise ValueError("duplicate tensor names in bundle")
    for name, _, role in tensors:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr, role in tensors:
        fname = f"{name}.padt"
        write_tensor_file(root / fname, arr)
        entries.append({"name": name, "file": fname,
                        "shape": [int(d) for d in arr.shape],
                        "dtype": "f32", "role": role})
    manifest = {"format": "padt-bundle", "version": FORMAT_VERSION,
                "meta": dict(meta or {}), "tensors": entries}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root
