"""Contrastive training-set construction.

For every query in the (English) training pool, mine its top-k most similar
pool examples, score each (query, candidate) pair by 1-shot in-context
prediction, and mark the candidate positive when the prediction matches the
query's true label. Mining keeps the scorer budget at |queries| * k calls
instead of all |pool|^2 pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import CandidateSet, Dataset, DatasetError
from .embedding import EmbeddingStore, top_k
from .scorer import (
    PromptMeta,
    PromptSpec,
    ScoreRequest,
    ScorerClient,
    TransportError,
    render_prompt,
    score_labels,
)

POLARITIES = ("positive", "negative")


class PairConstructionError(RuntimeError):
    """Pair scoring aborted; progress (if checkpointed) is on disk."""


@dataclass(frozen=True)
class TrainingPair:
    query_id: str
    candidate_id: str
    polarity: str  # "positive" | "negative"
    mined_rank: int  # 1-based rank within the mined candidate list
    mined_score: float

    def __post_init__(self) -> None:
        if self.polarity not in POLARITIES:
            raise DatasetError(f"unknown polarity {self.polarity!r}")
        if self.mined_rank < 1:
            raise DatasetError(f"mined_rank must be >= 1, got {self.mined_rank}")


@dataclass
class ConstructionConfig:
    k: int = 10
    checkpoint_every: int = 100
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DatasetError(f"k must be >= 1, got {self.k}")


def mine_candidates(train: Dataset, store: EmbeddingStore, k: int) -> list[CandidateSet]:
    """Top-k similarity mining over the training pool, query excluded.

    Every query gets min(k, |pool| - 1) candidates, descending by cosine.
    """
    if k < 1:
        raise DatasetError(f"k must be >= 1, got {k}")
    missing = [ex.id for ex in train.examples if ex.id not in store]
    if missing:
        raise DatasetError(
            f"missing embedding rows for {len(missing)} train ids (first: {missing[0]!r})"
        )
    sets = []
    for query in train.examples:
        ranked = top_k(store, store.vector(query.id), k, exclude={query.id})
        sets.append(
            CandidateSet(
                query_id=query.id,
                candidate_ids=[cid for cid, _ in ranked],
                scores=[score for _, score in ranked],
            )
        )
    return sets


def construct_pairs(
    train: Dataset,
    cands: Sequence[CandidateSet],
    scorer: ScorerClient,
    spec: PromptSpec,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 100,
) -> list[TrainingPair]:
    """Score every mined (query, candidate) pair with 1-shot prediction.

    The candidate serves as the single shot; the query's true label never
    enters the prompt. Progress is appended to ``checkpoint_path`` every
    ``checkpoint_every`` pairs so an aborted run resumes without re-scoring.
    """
    done: dict[tuple[str, str], TrainingPair] = {}
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        for pair in load_pairs(checkpoint_path):
            done[(pair.query_id, pair.candidate_id)] = pair

    pairs: list[TrainingPair] = []
    fresh: list[TrainingPair] = []  # scored this run, pending checkpoint flush

    def flush() -> None:
        nonlocal fresh
        if checkpoint_path is not None and fresh:
            _append_pairs(fresh, checkpoint_path)
            fresh = []

    continuations = tuple(train.label_set)
    for cand_set in cands:
        query = train.by_id(cand_set.query_id)
        for rank0, candidate_id in enumerate(cand_set.candidate_ids):
            key = (cand_set.query_id, candidate_id)
            mined_score = cand_set.scores[rank0] if cand_set.scores else 0.0
            if key in done:
                pairs.append(done[key])
                continue
            candidate = train.by_id(candidate_id)
            prompt = render_prompt(spec, [candidate], query.text)
            request = ScoreRequest(
                prompt_prefix=prompt,
                continuations=continuations,
                meta=PromptMeta(
                    shot_labels=(candidate.label,),
                    top_shot_label=candidate.label,
                    query_label=query.label,
                ),
            )
            try:
                prediction = score_labels(scorer, request)
            except TransportError as err:
                flush()
                raise PairConstructionError(
                    f"scorer unreachable at pair ({query.id!r}, {candidate_id!r}); "
                    f"{len(pairs)} pairs checkpointed: {err}"
                ) from err
            polarity = "positive" if prediction.label == query.label else "negative"
            pair = TrainingPair(
                query_id=cand_set.query_id,
                candidate_id=candidate_id,
                polarity=polarity,
                mined_rank=rank0 + 1,
                mined_score=mined_score,
            )
            pairs.append(pair)
            fresh.append(pair)
            if len(fresh) >= checkpoint_every:
                flush()
    flush()
    return pairs


def save_candidates(candidates: Sequence[CandidateSet], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for cand in candidates:
            record = {
                "query_id": cand.query_id,
                "candidate_ids": list(cand.candidate_ids),
                "scores": list(cand.scores),
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_candidates(path: str | Path) -> list[CandidateSet]:
    path = Path(path)
    candidates: list[CandidateSet] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"{path}: malformed JSON on line {lineno}: {err.msg}") from err
            try:
                cand = CandidateSet(
                    query_id=str(record["query_id"]),
                    candidate_ids=[str(c) for c in record["candidate_ids"]],
                    scores=[float(s) for s in record.get("scores", [])],
                )
            except KeyError as err:
                raise DatasetError(f"{path}: missing field {err} on line {lineno}") from err
            except DatasetError as err:
                raise DatasetError(f"{path}: line {lineno}: {err}") from err
            if cand.query_id in seen:
                raise DatasetError(
                    f"{path}: duplicate candidate set for {cand.query_id!r} on line {lineno}"
                )
            seen.add(cand.query_id)
            candidates.append(cand)
    return candidates


def _pair_record(pair: TrainingPair) -> str:
    return json.dumps(
        {
            "query_id": pair.query_id,
            "candidate_id": pair.candidate_id,
            "polarity": pair.polarity,
            "mined_rank": pair.mined_rank,
            "mined_score": pair.mined_score,
        },
        ensure_ascii=False,
    )


def _append_pairs(pairs: Sequence[TrainingPair], path: str | Path) -> None:
    with Path(path).open("a", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(_pair_record(pair) + "\n")


def save_pairs(pairs: Sequence[TrainingPair], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(_pair_record(pair) + "\n")


def load_pairs(path: str | Path) -> list[TrainingPair]:
    path = Path(path)
    pairs: list[TrainingPair] = []
    seen: set[tuple[str, str]] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"{path}: malformed JSON on line {lineno}: {err.msg}") from err
            try:
                pair = TrainingPair(
                    query_id=str(record["query_id"]),
                    candidate_id=str(record["candidate_id"]),
                    polarity=str(record["polarity"]),
                    mined_rank=int(record["mined_rank"]),
                    mined_score=float(record["mined_score"]),
                )
            except KeyError as err:
                raise DatasetError(f"{path}: missing field {err} on line {lineno}") from err
            except DatasetError as err:
                raise DatasetError(f"{path}: line {lineno}: {err}") from err
            key = (pair.query_id, pair.candidate_id)
            if key in seen:
                raise DatasetError(f"{path}: duplicate pair {key!r} on line {lineno}")
            seen.add(key)
            pairs.append(pair)
    return pairs
