"""Standalone XEMB writer/reader.

Layout: magic "XEMB", u32 LE version=1, u32 LE rows, u32 LE dim, u32 LE
length-prefixed UTF-8 JSON {ids, provenance}, then rows*dim float32 LE
row-major payload. Kept independent of any consumer so exported files are
plain artifacts.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

XEMB_MAGIC = b"XEMB"
XEMB_VERSION = 1


class XembError(ValueError):
    """Invalid content or a malformed file."""


def write_xemb(
    path: str | Path,
    ids: Sequence[str],
    matrix: np.ndarray,
    provider: str,
    layer: int = 0,
    pooling: str = "provider_native",
) -> None:
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise XembError(f"matrix must be 2-d, got shape {matrix.shape}")
    rows, dim = matrix.shape
    if len(ids) != rows:
        raise XembError(f"{len(ids)} ids but {rows} matrix rows")
    if len(set(ids)) != len(ids):
        raise XembError("duplicate ids in embedding export")
    if not np.isfinite(matrix).all():
        raise XembError("non-finite values in embedding matrix")
    meta = {
        "ids": list(ids),
        "provenance": {"provider": provider, "layer": layer, "pooling": pooling},
    }
    meta_bytes = json.dumps(meta, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(XEMB_MAGIC)
        fh.write(struct.pack("<III", XEMB_VERSION, rows, dim))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_xemb(path: str | Path) -> tuple[list[str], np.ndarray, dict]:
    """Parse an XEMB file back into (ids, float32 matrix, provenance)."""
    blob = Path(path).read_bytes()
    if blob[:4] != XEMB_MAGIC:
        raise XembError(f"{path}: not an XEMB file")
    if len(blob) < 20:
        raise XembError(f"{path}: truncated header")
    version, rows, dim = struct.unpack_from("<III", blob, 4)
    if version != XEMB_VERSION:
        raise XembError(f"{path}: unsupported XEMB version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, 16)
    meta_end = 20 + meta_len
    if len(blob) < meta_end:
        raise XembError(f"{path}: truncated metadata block")
    try:
        meta = json.loads(blob[20:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise XembError(f"{path}: corrupt metadata block: {err}") from err
    ids = meta.get("ids", [])
    if len(ids) != rows:
        raise XembError(f"{path}: header declares {rows} rows but metadata lists {len(ids)} ids")
    expected = rows * dim * 4
    payload = blob[meta_end:]
    if len(payload) != expected:
        raise XembError(f"{path}: truncated payload: expected {expected} bytes, found {len(payload)}")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
    return list(ids), matrix, dict(meta.get("provenance", {}))
