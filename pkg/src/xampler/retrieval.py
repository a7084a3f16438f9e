"""Few-shot example retrieval and the two prediction routes built on it:
in-context scoring through an LLM scorer, and scorer-free KNN majority
voting.

Two retrieval settings exist. Label-agnostic takes the top-n most similar
pool examples outright; label-aware takes the single best example of every
class, so the shot list covers the label set exactly once. Shots are
presented in ascending similarity so the strongest example sits next to the
query clause.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Dataset, Example
from .embedding import EmbeddingStore, cosine_similarity, top_k
from .scorer import (
    Prediction,
    PromptMeta,
    PromptSpec,
    ScoreRequest,
    ScorerClient,
    render_prompt,
    score_labels,
)
from .trainer import RetrievalHead, encode

MODES = ("label_aware", "label_agnostic")
SHOT_ORDERS = ("asc", "desc")


class RetrievalError(ValueError):
    """Invalid setting or a pool that cannot satisfy it."""


@dataclass(frozen=True)
class RetrievalSetting:
    mode: str
    n_shots: int
    shot_order: str = "asc"  # prompt order; "asc" puts the best shot last

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise RetrievalError(f"unknown retrieval mode {self.mode!r}")
        if self.n_shots < 1:
            raise RetrievalError(f"n_shots must be >= 1, got {self.n_shots}")
        if self.shot_order not in SHOT_ORDERS:
            raise RetrievalError(f"unknown shot order {self.shot_order!r}")


@dataclass
class ShotList:
    query_id: str
    shots: list[tuple[Example, float]]  # prompt order per the setting

    def __post_init__(self) -> None:
        ids = [ex.id for ex, _ in self.shots]
        if len(set(ids)) != len(ids):
            raise RetrievalError(f"duplicate shot ids for query {self.query_id!r}")

    def examples(self) -> list[Example]:
        return [ex for ex, _ in self.shots]

    def labels(self) -> list[str]:
        return [ex.label for ex, _ in self.shots]


def _encoded_scores(
    query_base: np.ndarray,
    head: RetrievalHead | None,
    pool: Dataset,
    pool_store: EmbeddingStore,
    skip: set[str],
) -> list[tuple[Example, float]]:
    """Cosine between the encoded query and every non-skipped pool example."""
    candidates = [ex for ex in pool.examples if ex.id not in skip]
    if head is None:
        return [
            (ex, cosine_similarity(query_base, pool_store.vector(ex.id))) for ex in candidates
        ]
    encoded_query = encode(head, np.asarray(query_base, dtype=np.float64))
    scored = []
    for ex in candidates:
        enc = encode(head, pool_store.vector(ex.id).astype(np.float64))
        scored.append((ex, float(np.clip(enc @ encoded_query, -1.0, 1.0))))
    return scored


def retrieve(
    query_base: Sequence[float] | np.ndarray,
    head: RetrievalHead | None,
    pool: Dataset,
    pool_store: EmbeddingStore,
    setting: RetrievalSetting,
    query_id: str = "",
    exclude_ids: Iterable[str] = (),
) -> ShotList:
    """Select shots for one query; ``head=None`` retrieves on raw base
    embeddings.

    The query itself (by ``query_id``) and any ``exclude_ids`` never appear.
    Selection ties break by ascending id; the returned list follows the
    setting's shot order (ascending score by default).
    """
    skip = set(exclude_ids)
    if query_id:
        skip.add(query_id)
    query_base = np.asarray(query_base, dtype=np.float64)

    if setting.mode == "label_aware" and setting.n_shots != len(pool.label_set):
        raise RetrievalError(
            f"label_aware needs n_shots == |label_set| ({len(pool.label_set)}), "
            f"got {setting.n_shots}"
        )

    scored = _encoded_scores(query_base, head, pool, pool_store, skip)

    if setting.mode == "label_agnostic":
        scored.sort(key=lambda item: (-item[1], item[0].id))
        selected = scored[: setting.n_shots]
    else:
        best_of: dict[str, tuple[Example, float]] = {}
        for ex, score in sorted(scored, key=lambda item: (-item[1], item[0].id)):
            if ex.label not in best_of:
                best_of[ex.label] = (ex, score)
        missing = [c for c in pool.label_set if c not in best_of]
        if missing:
            raise RetrievalError(f"label_aware: class {missing[0]!r} absent from pool")
        selected = [best_of[c] for c in pool.label_set]

    if setting.shot_order == "asc":
        selected.sort(key=lambda item: (item[1], item[0].id))
    else:
        selected.sort(key=lambda item: (-item[1], item[0].id))
    return ShotList(query_id=query_id, shots=selected)


def knn_predict(shots: ShotList, label_set: Sequence[str] | None = None) -> str:
    """Majority label of the shots; ties prefer the class with the larger
    summed similarity, then label-set order."""
    if not shots.shots:
        raise RetrievalError("knn_predict needs at least one shot")
    votes: dict[str, int] = {}
    sim_sum: dict[str, float] = {}
    for ex, score in shots.shots:
        votes[ex.label] = votes.get(ex.label, 0) + 1
        sim_sum[ex.label] = sim_sum.get(ex.label, 0.0) + score
    order = list(label_set) if label_set is not None else sorted(votes)
    rank = {label: i for i, label in enumerate(order)}
    return min(
        votes,
        key=lambda label: (-votes[label], -sim_sum[label], rank.get(label, len(rank))),
    )


def icl_predict(
    query: Example,
    shots: ShotList,
    scorer: ScorerClient,
    spec: PromptSpec,
    label_set: Sequence[str],
) -> Prediction:
    """Render the few-shot prompt for the query and score the label set.

    The query's own label never enters the prompt; it travels only in the
    out-of-band metadata that mock scorers consume.
    """
    examples = shots.examples()
    prompt = render_prompt(spec, examples, query.text)
    top_label = (
        max(shots.shots, key=lambda item: (item[1], item[0].id))[0].label
        if shots.shots
        else None
    )
    request = ScoreRequest(
        prompt_prefix=prompt,
        continuations=tuple(label_set),
        meta=PromptMeta(
            shot_labels=tuple(ex.label for ex in examples),
            top_shot_label=top_label,
            query_label=query.label,
        ),
    )
    return score_labels(scorer, request)
