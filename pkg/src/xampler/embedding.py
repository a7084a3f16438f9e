"""Dense example embeddings: pooling, cosine similarity, exact top-k search,
and the XEMB binary vector file format.

Search is exact brute force. Candidate pools here are at most a few thousand
rows, so full scoring keeps every result reproducible and trivially checkable
against a sort-everything oracle.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

XEMB_MAGIC = b"XEMB"
XEMB_VERSION = 1

POOLINGS = ("mean", "position_weighted_mean", "provider_native")


class EmbeddingError(ValueError):
    """Degenerate vectors, missing rows, or shape violations."""


class EmbeddingFormatError(ValueError):
    """Corrupt or foreign XEMB payload."""


@dataclass(frozen=True)
class Provenance:
    """Where a store's vectors came from: provider name, layer, pooling."""

    provider: str
    layer: int = 0
    pooling: str = "provider_native"

    def __post_init__(self) -> None:
        if self.layer < 0:
            raise EmbeddingError(f"negative layer index {self.layer}")
        if self.pooling not in POOLINGS:
            raise EmbeddingError(f"unknown pooling {self.pooling!r}")


@dataclass
class HiddenStates:
    """Per-token states of one sequence: a T x d matrix, T >= 1."""

    states: np.ndarray

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise EmbeddingError(f"hidden states must be T x d with T >= 1, got {self.states.shape}")
        if not np.isfinite(self.states).all():
            raise EmbeddingError("hidden states contain non-finite entries")

    @property
    def tokens(self) -> int:
        return self.states.shape[0]


@dataclass
class EmbeddingStore:
    """Immutable id-keyed vector matrix, one float32 row per example id."""

    ids: list[str]
    matrix: np.ndarray
    provenance: Provenance
    _row_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2:
            raise EmbeddingError(f"matrix must be 2-D, got shape {self.matrix.shape}")
        if len(self.ids) != self.matrix.shape[0]:
            raise EmbeddingError(
                f"{len(self.ids)} ids but {self.matrix.shape[0]} matrix rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise EmbeddingError("duplicate ids in embedding store")
        if self.matrix.size and not np.isfinite(self.matrix).all():
            raise EmbeddingError("embedding matrix contains non-finite entries")
        self._row_of = {i: r for r, i in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, example_id: str) -> bool:
        return example_id in self._row_of

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def vector(self, example_id: str) -> np.ndarray:
        try:
            row = self._row_of[example_id]
        except KeyError:
            raise EmbeddingError(f"no embedding row for id {example_id!r}") from None
        return self.matrix[row]


def mean_pool(h: HiddenStates) -> np.ndarray:
    """Plain token average over the T x d state matrix."""
    return h.states.mean(axis=0)


def position_weighted_mean_pool(h: HiddenStates) -> np.ndarray:
    """Token average with weights rising linearly in position.

    Weight of (1-indexed) token t is t / sum(1..T), so weights are normalized
    and later tokens count more.
    """
    t = h.tokens
    weights = np.arange(1, t + 1, dtype=np.float64)
    weights /= weights.sum()
    return weights @ h.states


def cosine_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine of the angle between a and b, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("degenerate embedding: zero norm")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def top_k(
    store: EmbeddingStore,
    query: Sequence[float] | np.ndarray,
    k: int,
    exclude: Iterable[str] = (),
) -> list[tuple[str, float]]:
    """Exact top-k rows by cosine similarity, descending; ties by ascending id.

    Returns min(k, remaining-pool-size) entries and never an excluded id.
    """
    if k < 1:
        raise EmbeddingError(f"k must be >= 1, got {k}")
    if len(store) == 0:
        raise EmbeddingError("empty embedding store")
    query = np.asarray(query, dtype=np.float64)
    qnorm = float(np.linalg.norm(query))
    if qnorm == 0.0:
        raise EmbeddingError("degenerate embedding: zero norm")

    matrix = store.matrix.astype(np.float64)
    row_norms = np.linalg.norm(matrix, axis=1)
    if (row_norms == 0.0).any():
        bad = store.ids[int(np.argmax(row_norms == 0.0))]
        raise EmbeddingError(f"degenerate embedding: zero norm for id {bad!r}")
    scores = np.clip((matrix @ query) / (row_norms * qnorm), -1.0, 1.0)

    excluded = set(exclude)
    scored = [
        (store.ids[r], float(scores[r]))
        for r in range(len(store))
        if store.ids[r] not in excluded
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def save_embeddings(store: EmbeddingStore, path: str | Path) -> None:
    """Write the XEMB binary format.

    Layout: magic "XEMB", u32 LE version, u32 LE rows, u32 LE dim,
    u32 LE JSON length + UTF-8 JSON {ids, provenance}, then rows*dim
    float32 LE row-major payload.
    """
    meta = {
        "ids": store.ids,
        "provenance": {
            "provider": store.provenance.provider,
            "layer": store.provenance.layer,
            "pooling": store.provenance.pooling,
        },
    }
    meta_bytes = json.dumps(meta, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    rows, dim = store.matrix.shape
    with Path(path).open("wb") as fh:
        fh.write(XEMB_MAGIC)
        fh.write(struct.pack("<III", XEMB_VERSION, rows, dim))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        payload = np.ascontiguousarray(store.matrix, dtype="<f4")
        fh.write(payload.tobytes())


def load_embeddings(path: str | Path) -> EmbeddingStore:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != XEMB_MAGIC:
        raise EmbeddingFormatError(f"{path}: not an XEMB file")
    if len(data) < 20:
        raise EmbeddingFormatError(f"{path}: truncated header")
    version, rows, dim = struct.unpack_from("<III", data, 4)
    if version != XEMB_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported XEMB version {version}")
    (meta_len,) = struct.unpack_from("<I", data, 16)
    meta_end = 20 + meta_len
    if len(data) < meta_end:
        raise EmbeddingFormatError(f"{path}: truncated metadata block")
    try:
        meta = json.loads(data[20:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise EmbeddingFormatError(f"{path}: corrupt metadata block: {err}") from err
    ids = [str(i) for i in meta.get("ids", [])]
    if len(ids) != rows:
        raise EmbeddingFormatError(
            f"{path}: header declares {rows} rows but metadata lists {len(ids)} ids"
        )
    payload = data[meta_end:]
    expected = rows * dim * 4
    if len(payload) != expected:
        raise EmbeddingFormatError(
            f"{path}: truncated payload: expected {expected} bytes, found {len(payload)}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
    prov_meta = meta.get("provenance", {})
    provenance = Provenance(
        provider=str(prov_meta.get("provider", "unknown")),
        layer=int(prov_meta.get("layer", 0)),
        pooling=str(prov_meta.get("pooling", "provider_native")),
    )
    return EmbeddingStore(ids=ids, matrix=matrix, provenance=provenance)
