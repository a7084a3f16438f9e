"""Contrastive fine-tuning of the retrieval head.

The head is a trainable linear map (optionally tanh-squashed) shared between
query and candidate encoding, applied on top of frozen base embeddings and
followed by L2 normalization. Training minimizes an InfoNCE objective: one
sampled positive per query against its mined negatives plus in-batch
negatives, optimized with a from-scratch AdamW. All math runs in double
precision; gradients are analytic and finite-difference checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import json
import struct

import numpy as np

from .dataconstruct import TrainingPair
from .embedding import EmbeddingStore

ACTIVATIONS = ("identity", "tanh")


class TrainingError(RuntimeError):
    """Untrainable input or numerically broken training state."""


@dataclass
class RetrievalHead:
    W: np.ndarray  # (d_out, d_in)
    b: np.ndarray  # (d_out,)
    activation: str = "identity"

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise TrainingError(f"bad head shapes W{self.W.shape} b{self.b.shape}")
        if self.W.shape[0] < 1:
            raise TrainingError("head output dimension must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise TrainingError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise TrainingError("head parameters contain non-finite entries")

    @classmethod
    def identity(cls, dim: int) -> RetrievalHead:
        return cls(W=np.eye(dim), b=np.zeros(dim), activation="identity")

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def copy(self) -> RetrievalHead:
        return RetrievalHead(W=self.W.copy(), b=self.b.copy(), activation=self.activation)


def _forward(head: RetrievalHead, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """activation(W x + b) for stacked rows, then L2 normalization.

    Returns (pre-norm outputs Z, norms N, unit outputs Y).
    """
    pre = rows @ head.W.T + head.b
    z = np.tanh(pre) if head.activation == "tanh" else pre
    norms = np.linalg.norm(z, axis=1)
    if (norms == 0.0).any():
        raise TrainingError("degenerate encoded vector: zero norm before normalization")
    return z, norms, z / norms[:, None]


def encode(head: RetrievalHead, base: Sequence[float] | np.ndarray) -> np.ndarray:
    """Map one base embedding into the unit-norm retrieval space."""
    row = np.asarray(base, dtype=np.float64)
    if row.shape != (head.d_in,):
        raise TrainingError(f"expected base of dim {head.d_in}, got shape {row.shape}")
    _, _, unit = _forward(head, row[None, :])
    return unit[0]


def contrastive_loss(
    head: RetrievalHead,
    query_base: np.ndarray,
    pos_base: np.ndarray,
    neg_bases: Sequence[np.ndarray],
    tau: float,
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """InfoNCE loss of one query against 1 positive and J >= 0 negatives.

    loss = -log( exp(s+/tau) / (exp(s+/tau) + sum_j exp(s-_j/tau)) ) with s
    the cosine of encoded vectors. Returns the loss and analytic gradients
    (dL/dW, dL/db); the head is shared, so query and candidate contributions
    accumulate into the same tensors.
    """
    if tau <= 0:
        raise TrainingError(f"temperature must be positive, got {tau}")
    stacked = np.vstack([query_base, pos_base, *neg_bases]).astype(np.float64)
    if stacked.shape[1] != head.d_in:
        raise TrainingError(
            f"dimension mismatch: head expects {head.d_in}, vectors have {stacked.shape[1]}"
        )
    z, norms, y = _forward(head, stacked)
    y_query = y[0]
    sims = y[1:] @ y_query  # [s+, s-_1, ..., s-_J]
    logits = sims / tau

    shift = logits.max()
    lse = shift + np.log(np.exp(logits - shift).sum())
    loss = float(lse - logits[0])

    # dL/ds for [positive, negatives...]: softmax weights, positive minus 1.
    coef = np.exp(logits - lse)
    coef[0] -= 1.0
    coef /= tau

    grad_y = np.empty_like(y)
    grad_y[0] = coef @ y[1:]
    grad_y[1:] = coef[:, None] * y_query

    # Through L2 normalization: dy/dz = (I - y y^T) / ||z||.
    radial = (y * grad_y).sum(axis=1)
    grad_z = (grad_y - radial[:, None] * y) / norms[:, None]
    grad_pre = grad_z * (1.0 - z * z) if head.activation == "tanh" else grad_z

    grad_w = grad_pre.T @ stacked
    grad_b = grad_pre.sum(axis=0)
    return loss, (grad_w, grad_b)


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self) -> None:
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise TrainingError("AdamW betas must lie strictly in (0, 1)")


@dataclass
class OptimizerState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> OptimizerState:
        return cls(
            step=0,
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
        )


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    lr: float,
    cfg: AdamWConfig,
) -> OptimizerState:
    """One decoupled-weight-decay Adam update, applied to params in place."""
    if len(params) != len(grads):
        raise TrainingError("params/grads arity mismatch")
    for g in grads:
        if not np.isfinite(g).all():
            raise TrainingError("non-finite gradient; training blew up")
    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p)
    return state


@dataclass
class TrainerConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 2e-5
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    temperature: float = 0.05
    seed: int = 0
    max_pos_per_query: int = 1  # resampled every epoch
    activation: str = "identity"
    d_out: int | None = None  # None: match the base embedding dimension

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise TrainingError("temperature must be positive")
        if self.learning_rate <= 0:
            raise TrainingError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("epochs and batch size must be >= 1")


@dataclass
class TrainingLog:
    epoch_losses: list[float]
    trained_queries: int
    skipped_queries: int
    steps: int


def _initial_head(d_in: int, cfg: TrainerConfig, rng: np.random.Generator) -> RetrievalHead:
    d_out = cfg.d_out or d_in
    if d_out == d_in:
        w = np.eye(d_in)
    else:
        w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in))
    return RetrievalHead(W=w, b=np.zeros(d_out), activation=cfg.activation)


def train(
    pairs: Sequence[TrainingPair],
    base_store: EmbeddingStore,
    cfg: TrainerConfig,
) -> tuple[RetrievalHead, TrainingLog]:
    """Run the full contrastive training loop; deterministic given cfg.seed.

    Each epoch shuffles the trainable queries, walks them in batches, samples
    one positive per query, and takes one optimizer step per batch against
    mined plus in-batch negatives. Queries without positives are skipped and
    counted. The base store is never mutated.
    """
    by_query: dict[str, dict[str, list[str]]] = {}
    for pair in pairs:
        slot = by_query.setdefault(pair.query_id, {"positive": [], "negative": []})
        slot[pair.polarity].append(pair.candidate_id)

    every_id = set(by_query)
    for pair in pairs:
        every_id.add(pair.candidate_id)
    missing = sorted(i for i in every_id if i not in base_store)
    if missing:
        raise TrainingError(f"no base embedding for id {missing[0]!r} ({len(missing)} missing)")

    trainable = [q for q, slot in by_query.items() if slot["positive"]]
    skipped = len(by_query) - len(trainable)
    if not trainable:
        raise TrainingError("untrainable pair set: no query has a positive candidate")

    vec = {i: base_store.vector(i).astype(np.float64) for i in every_id}
    rng = np.random.default_rng(cfg.seed)
    head = _initial_head(base_store.dim, cfg, rng)
    state = OptimizerState.zeros_like(head.params())

    epoch_losses: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(trainable))
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [trainable[i] for i in order[start : start + cfg.batch_size]]
            sampled_pos = {
                q: by_query[q]["positive"][int(rng.integers(len(by_query[q]["positive"])))]
                for q in batch
            }
            grad_w = np.zeros_like(head.W)
            grad_b = np.zeros_like(head.b)
            for q in batch:
                pos_id = sampled_pos[q]
                neg_ids = list(by_query[q]["negative"])
                # in-batch negatives: the other queries' sampled positives,
                # minus any that collide with this query's own positive
                neg_ids += [sampled_pos[o] for o in batch if o != q and sampled_pos[o] != pos_id]
                loss, (gw, gb) = contrastive_loss(
                    head, vec[q], vec[pos_id], [vec[n] for n in neg_ids], cfg.temperature
                )
                loss_sum += loss
                grad_w += gw
                grad_b += gb
            grad_w /= len(batch)
            grad_b /= len(batch)
            adamw_step(head.params(), [grad_w, grad_b], state, cfg.learning_rate, cfg.adamw)
        epoch_losses.append(loss_sum / len(trainable))

    log = TrainingLog(
        epoch_losses=epoch_losses,
        trained_queries=len(trainable),
        skipped_queries=skipped,
        steps=state.step,
    )
    return head, log


def save_head(
    head: RetrievalHead,
    path: str | Path,
    tau: float = 0.05,
    seed: int = 0,
    epoch: int = 0,
) -> None:
    """Checkpoint format: u32 LE JSON-header length + header, u64 LE payload
    length + float64 LE payload (W row-major, then b)."""
    header = {
        "d_in": head.d_in,
        "d_out": head.d_out,
        "activation": head.activation,
        "tau": tau,
        "seed": seed,
        "epoch": epoch,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(head.W, dtype="<f8").tobytes()
    payload += np.ascontiguousarray(head.b, dtype="<f8").tobytes()
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)


def load_head(path: str | Path) -> tuple[RetrievalHead, dict]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4:
        raise TrainingError(f"{path}: truncated head checkpoint")
    (header_len,) = struct.unpack_from("<I", data, 0)
    header_end = 4 + header_len
    if len(data) < header_end + 8:
        raise TrainingError(f"{path}: truncated head checkpoint")
    try:
        header = json.loads(data[4:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise TrainingError(f"{path}: corrupt head header: {err}") from err
    (payload_len,) = struct.unpack_from("<Q", data, header_end)
    payload = data[header_end + 8 :]
    if len(payload) != payload_len:
        raise TrainingError(
            f"{path}: truncated payload: expected {payload_len} bytes, found {len(payload)}"
        )
    d_in, d_out = int(header["d_in"]), int(header["d_out"])
    expected = (d_out * d_in + d_out) * 8
    if payload_len != expected:
        raise TrainingError(f"{path}: payload/shape mismatch: {payload_len} != {expected}")
    flat = np.frombuffer(payload, dtype="<f8")
    head = RetrievalHead(
        W=flat[: d_out * d_in].reshape(d_out, d_in).copy(),
        b=flat[d_out * d_in :].copy(),
        activation=str(header["activation"]),
    )
    return head, header
