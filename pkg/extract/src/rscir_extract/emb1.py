"""Writer for the engine's EMB1 container, plus provenance sidecars.

Layout (shared, bit-exact contract with the retrieval engine):

    "EMB1" | u32-LE header length | UTF-8 JSON header | f32-LE row-major payload

Header fields: version, dtype ("f32"), rows, dim, normalized, ids.
Files are written atomically (temp file + rename); a provenance JSON
describing how the rows were produced is written next to every store.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"EMB1"


class ExtractError(Exception):
    """Raised on any toolkit input or consistency problem."""


def l2_normalize(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ExtractError("cannot normalize a zero-norm embedding row")
    return matrix / norms


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_emb1(
    path: str | Path,
    ids: Sequence[str],
    matrix: np.ndarray,
    normalize: bool = True,
) -> None:
    """Write an id-indexed float32 matrix in the engine's container format."""
    path = Path(path)
    ids = [str(i) for i in ids]
    if len(set(ids)) != len(ids):
        raise ExtractError("duplicate ids in embedding store")
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ExtractError(f"matrix shape {matrix.shape} does not match {len(ids)} ids")
    if not np.all(np.isfinite(matrix)):
        raise ExtractError("matrix contains NaN or infinity")
    if normalize:
        matrix = l2_normalize(matrix)
    payload = np.ascontiguousarray(matrix, dtype="<f4")
    header = {
        "version": 1,
        "dtype": "f32",
        "rows": len(ids),
        "dim": int(matrix.shape[1]),
        "normalized": bool(normalize),
        "ids": ids,
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    _atomic_write(
        path, MAGIC + struct.pack("<I", len(blob)) + blob + payload.tobytes()
    )


def write_provenance(store_path: str | Path, info: dict) -> Path:
    """Write the provenance sidecar for an embedding store."""
    sidecar = Path(str(store_path) + ".provenance.json")
    text = json.dumps(info, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    _atomic_write(sidecar, text.encode("utf-8"))
    return sidecar


def write_jsonl(path: str | Path, records: Sequence[dict]) -> None:
    """Write records as stable line-delimited JSON (sorted keys, LF)."""
    lines = [json.dumps(rec, sort_keys=True, ensure_ascii=False) for rec in records]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))
