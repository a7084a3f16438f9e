"""Synthetic multilingual world for the end-to-end mock pipeline.

Base embeddings are clustered Gaussians: each class owns one signal
dimension, and every example adds per-example noise plus a shared
per-language offset on the nuisance dimensions. Cross-lingual retrieval
with the raw embeddings is therefore dominated by language noise, while a
head that learns (from English-only supervision) to down-weight the
nuisance dimensions transfers to the other languages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, Example
from .embedding import EmbeddingStore, Provenance

LABELS = (
    "science",
    "travel",
    "politics",
    "sports",
    "health",
    "entertainment",
    "geography",
)

POOL_LANGUAGE = "eng_Latn"
EVAL_LANGUAGES = ("deu_Latn", "swh_Latn", "tha_Thai")


@dataclass
class SyntheticWorld:
    pool: Dataset
    pool_store: EmbeddingStore
    eval_sets: list[Dataset]
    eval_stores: dict[str, EmbeddingStore]

    @property
    def label_set(self) -> tuple[str, ...]:
        return self.pool.label_set


def _make_language(
    rng: np.random.Generator,
    language: str,
    size: int,
    labels: tuple[str, ...],
    role: str,
    class_scale: float,
    jitter_scale: float,
    noise_scale: float,
    offset_scale: float,
    n_nuisance: int,
) -> tuple[Dataset, EmbeddingStore]:
    n_classes = len(labels)
    dim = n_classes + n_nuisance
    offset = rng.normal(0.0, offset_scale, size=n_nuisance)
    examples = []
    vectors = np.zeros((size, dim), dtype=np.float64)
    for i in range(size):
        label = labels[i % n_classes]
        vec = np.zeros(dim)
        vec[i % n_classes] = class_scale
        vec[:n_classes] += rng.normal(0.0, jitter_scale, size=n_classes)
        vec[n_classes:] = offset + rng.normal(0.0, noise_scale, size=n_nuisance)
        vectors[i] = vec
        examples.append(
            Example(
                id=f"{language}-{i:03d}",
                text=f"{label} item {i} ({language})",
                label=label,
                language=language,
            )
        )
    dataset = Dataset(name=language, label_set=labels, examples=examples, role=role)
    store = EmbeddingStore(
        ids=[ex.id for ex in examples],
        matrix=vectors.astype(np.float32),
        provenance=Provenance(provider="synthetic"),
    )
    return dataset, store


def make_world(
    seed: int = 0,
    pool_size: int = 100,
    eval_size: int = 70,
    labels: tuple[str, ...] = LABELS,
    eval_languages: tuple[str, ...] = EVAL_LANGUAGES,
    class_scale: float = 1.0,
    jitter_scale: float = 0.1,
    noise_scale: float = 1.0,
    offset_scale: float = 1.0,
    n_nuisance: int = 9,
) -> SyntheticWorld:
    """Build the deterministic pool + eval languages for a given seed."""
    rng = np.random.default_rng(seed)
    pool, pool_store = _make_language(
        rng,
        POOL_LANGUAGE,
        pool_size,
        labels,
        "train",
        class_scale,
        jitter_scale,
        noise_scale,
        offset_scale,
        n_nuisance,
    )
    eval_sets = []
    eval_stores = {}
    for language in eval_languages:
        ds, store = _make_language(
            rng,
            language,
            eval_size,
            labels,
            "eval",
            class_scale,
            jitter_scale,
            noise_scale,
            offset_scale,
            n_nuisance,
        )
        eval_sets.append(ds)
        eval_stores[language] = store
    return SyntheticWorld(
        pool=pool, pool_store=pool_store, eval_sets=eval_sets, eval_stores=eval_stores
    )
