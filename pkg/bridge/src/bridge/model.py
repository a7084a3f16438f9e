"""A tiny deterministic causal language model with layer-wise hidden states.

The bridge needs a model that produces per-layer token states for pooling and
next-token log-probabilities for continuation scoring. This one is built from
seeded NumPy weights: the byte-level tokenizer handles any script without a
vocabulary download, and all arithmetic is float64, so identical inputs give
bit-identical outputs on every platform.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

BOS = 256
VOCAB_SIZE = 257

POOLINGS = ("mean", "position_weighted_mean")

DEFAULT_MODEL_ID = "tinylm-multilingual-v1"

BRIDGE_CONFIG_VERSION = 1


class ModelError(RuntimeError):
    """Bad model input: unknown layer, oversized text, empty continuation."""


class ConfigError(ValueError):
    """Malformed or incomplete bridge configuration."""


@dataclass(frozen=True)
class BridgeConfig:
    model_id: str = DEFAULT_MODEL_ID
    device: str = "cpu"
    max_batch: int = 16
    port: int = 8713

    def __post_init__(self) -> None:
        if self.max_batch < 1:
            raise ConfigError(f"max_batch must be >= 1, got {self.max_batch}")
        if not self.model_id:
            raise ConfigError("model_id must be non-empty")


def load_config(path: str | Path) -> BridgeConfig:
    """Read a JSON config with a required ``version`` field."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: malformed JSON config: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if "version" not in raw:
        raise ConfigError(f"{path}: missing config key 'version'")
    if raw["version"] != BRIDGE_CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {raw['version']!r}")
    fields = {k: raw[k] for k in ("model_id", "device", "max_batch", "port") if k in raw}
    return BridgeConfig(**fields)


def pool_states(states: np.ndarray, pooling: str) -> np.ndarray:
    """Collapse a T x d state matrix to one vector.

    ``mean`` is the plain token average; ``position_weighted_mean`` weights
    token t (1-indexed) by t / sum(1..T), so later tokens count more.
    """
    if pooling not in POOLINGS:
        raise ModelError(f"unknown pooling {pooling!r}")
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 1:
        raise ModelError("states must be a T x d matrix with T >= 1")
    if pooling == "mean":
        return states.mean(axis=0)
    t = states.shape[0]
    weights = np.arange(1, t + 1, dtype=np.float64)
    weights /= weights.sum()
    return weights @ states


class TinyCausalLM:
    """Seeded byte-level causal LM exposing states at layers 0..depth.

    Layer 0 is the token+position embedding; each block mixes every position
    with the running prefix mean, so states are causal and the final layer
    drives a weight-tied next-token distribution.
    """

    def __init__(
        self,
        model_id: str = DEFAULT_MODEL_ID,
        d_model: int = 32,
        depth: int = 4,
        max_positions: int = 4096,
    ) -> None:
        if depth < 1:
            raise ModelError(f"depth must be >= 1, got {depth}")
        if d_model < 2:
            raise ModelError(f"d_model must be >= 2, got {d_model}")
        self.model_id = model_id
        self.d_model = d_model
        self.depth = depth
        self.max_positions = max_positions
        seed = int.from_bytes(hashlib.sha256(model_id.encode("utf-8")).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d_model)
        self.token_table = rng.normal(0.0, scale, size=(VOCAB_SIZE, d_model))
        self.position_table = rng.normal(0.0, scale, size=(max_positions, d_model))
        self.blocks = [
            (
                rng.normal(0.0, scale, size=(d_model, d_model)),
                rng.normal(0.0, scale, size=(d_model, d_model)),
                rng.normal(0.0, scale, size=d_model),
            )
            for _ in range(depth)
        ]

    @property
    def dim(self) -> int:
        return self.d_model

    def tokenize(self, text: str) -> list[int]:
        """BOS followed by the UTF-8 bytes of the text."""
        return [BOS, *text.encode("utf-8")]

    def _all_states(self, tokens: Sequence[int]) -> list[np.ndarray]:
        t = len(tokens)
        if t > self.max_positions:
            raise ModelError(f"input of {t} tokens exceeds max positions {self.max_positions}")
        h = self.token_table[list(tokens)] + self.position_table[:t]
        states = [h]
        denom = np.arange(1, t + 1, dtype=np.float64)[:, None]
        for w_self, w_ctx, bias in self.blocks:
            ctx = np.cumsum(h, axis=0) / denom  # causal prefix mean
            h = (h + np.tanh(h @ w_self + ctx @ w_ctx + bias)) / np.sqrt(2.0)
            states.append(h)
        return states

    def hidden_states(self, text: str, layer: int) -> np.ndarray:
        """Token states at one layer; 0 is the embedding layer."""
        if not 0 <= layer <= self.depth:
            raise ModelError(f"layer {layer} out of range; model has layers 0..{self.depth}")
        return self._all_states(self.tokenize(text))[layer]

    def embed(self, text: str, layer: int, pooling: str) -> np.ndarray:
        return pool_states(self.hidden_states(text, layer), pooling)

    def embed_many(
        self, texts: Sequence[str], layer: int, pooling: str, max_batch: int = 16
    ) -> np.ndarray:
        """Pooled vectors for a batch, processed in chunks of max_batch."""
        if max_batch < 1:
            raise ModelError(f"max_batch must be >= 1, got {max_batch}")
        rows: list[np.ndarray] = []
        for start in range(0, len(texts), max_batch):
            for text in texts[start : start + max_batch]:
                rows.append(self.embed(text, layer, pooling))
        return np.stack(rows) if rows else np.empty((0, self.d_model))

    def _next_log_probs(self, tokens: Sequence[int]) -> np.ndarray:
        """Row t is the log-distribution of token t+1 given tokens[0..t]."""
        h = self._all_states(tokens)[-1]
        logits = h @ self.token_table.T / np.sqrt(self.d_model)
        shift = logits.max(axis=1, keepdims=True)
        lse = shift + np.log(np.exp(logits - shift).sum(axis=1, keepdims=True))
        return logits - lse

    def next_token_log_probs(self, text: str) -> np.ndarray:
        """Log-distribution over the vocabulary after the full text."""
        return self._next_log_probs(self.tokenize(text))[-1]

    def score_continuation(self, prompt: str, continuation: str) -> float:
        """Teacher-forced summed log-probability of the continuation bytes."""
        if continuation == "":
            raise ModelError("empty continuation string")
        tokens = self.tokenize(prompt) + list(continuation.encode("utf-8"))
        log_probs = self._next_log_probs(tokens)
        start = len(self.tokenize(prompt))
        total = 0.0
        for i in range(start, len(tokens)):
            total += float(log_probs[i - 1, tokens[i]])
        return total

    def score(self, prompt: str, continuations: Sequence[str]) -> list[float]:
        if not continuations:
            raise ModelError("score request with empty continuation list")
        return [self.score_continuation(prompt, c) for c in continuations]
