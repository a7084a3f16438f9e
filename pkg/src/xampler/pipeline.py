"""File-driven orchestration of the pipeline stages plus the selftest.

Every stage reads and writes artifacts on disk (datasets as JSONL,
embeddings as XEMB, pairs and shot lists as JSONL, heads as checkpoints)
so stages can be re-run independently or mixed with artifacts produced by
an external model bridge.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .corpus import Dataset, DatasetError, Example, load_dataset, save_dataset
from .dataconstruct import (
    construct_pairs,
    load_candidates,
    load_pairs,
    mine_candidates,
    save_candidates,
    save_pairs,
)
from .embedding import EmbeddingStore, load_embeddings, save_embeddings
from .evalharness import EvalRecord, evaluate, macro_average
from .retrieval import RetrievalSetting, ShotList, icl_predict, knn_predict, retrieve
from .scorer import PromptSpec, ScorerClient, mock_scorer
from .trainer import RetrievalHead, TrainerConfig, TrainingLog, load_head, save_head, train
from .synthetic import make_world


def stage_mine(
    train_path: str | Path,
    embeddings_path: str | Path,
    k: int,
    out_path: str | Path,
) -> int:
    """Mine top-k candidates for every training query; returns the count."""
    train_set = load_dataset(train_path, role="train")
    store = load_embeddings(embeddings_path)
    candidates = mine_candidates(train_set, store, k)
    save_candidates(candidates, out_path)
    return len(candidates)


def stage_construct(
    train_path: str | Path,
    candidates_path: str | Path,
    out_path: str | Path,
    scorer: ScorerClient,
    spec: PromptSpec,
    checkpoint_every: int = 100,
) -> tuple[int, int]:
    """Label mined candidates with 1-shot outcomes; returns (pos, neg)."""
    train_set = load_dataset(train_path, role="train")
    candidates = load_candidates(candidates_path)
    pairs = construct_pairs(
        train_set,
        candidates,
        scorer,
        spec,
        checkpoint_path=out_path,
        checkpoint_every=checkpoint_every,
    )
    save_pairs(pairs, out_path)
    positives = sum(1 for p in pairs if p.polarity == "positive")
    return positives, len(pairs) - positives


def stage_train(
    pairs_path: str | Path,
    embeddings_path: str | Path,
    head_path: str | Path,
    cfg: TrainerConfig,
) -> TrainingLog:
    pairs = load_pairs(pairs_path)
    store = load_embeddings(embeddings_path)
    head, log = train(pairs, store, cfg)
    save_head(head, head_path, tau=cfg.temperature, seed=cfg.seed, epoch=cfg.epochs)
    return log


def save_shots(shots: Sequence[ShotList], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for shot_list in shots:
            record = {
                "query_id": shot_list.query_id,
                "shots": [
                    {"id": ex.id, "score": score} for ex, score in shot_list.shots
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_shots(path: str | Path, pool: Dataset) -> list[ShotList]:
    path = Path(path)
    out: list[ShotList] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"{path}: malformed JSON on line {lineno}: {err.msg}") from err
            shots = [
                (pool.by_id(s["id"]), float(s["score"])) for s in record["shots"]
            ]
            out.append(ShotList(query_id=str(record["query_id"]), shots=shots))
    return out


def stage_retrieve(
    query_embeddings_path: str | Path,
    pool_path: str | Path,
    pool_embeddings_path: str | Path,
    setting: RetrievalSetting,
    out_path: str | Path,
    head_path: str | Path | None = None,
    query_path: str | Path | None = None,
) -> int:
    """Retrieve shots for every query id; ids come from the query dataset
    when given, else from the query embedding store."""
    query_store = load_embeddings(query_embeddings_path)
    if query_path is not None:
        query_ids = [ex.id for ex in load_dataset(query_path, role="eval").examples]
    else:
        query_ids = list(query_store.ids)
    pool = load_dataset(pool_path, role="train")
    pool_store = load_embeddings(pool_embeddings_path)
    head = load_head(head_path)[0] if head_path is not None else None
    shot_lists = []
    for query_id in query_ids:
        shot_lists.append(
            retrieve(
                query_store.vector(query_id),
                head,
                pool,
                pool_store,
                setting,
                query_id=query_id,
            )
        )
    save_shots(shot_lists, out_path)
    return len(shot_lists)


def icl_records(
    pool: Dataset,
    pool_store: EmbeddingStore,
    head: RetrievalHead | None,
    eval_sets: Sequence[Dataset],
    eval_stores: dict[str, EmbeddingStore],
    setting: RetrievalSetting,
    scorer: ScorerClient,
    spec: PromptSpec,
    method: str = "icl",
) -> list[EvalRecord]:
    """Per-language in-context accuracy of retrieval-backed prompting."""

    def predict(ds: Dataset, ex: Example) -> str:
        store = eval_stores[ds.name]
        shots = retrieve(
            store.vector(ex.id), head, pool, pool_store, setting, query_id=ex.id
        )
        return icl_predict(ex, shots, scorer, spec, pool.label_set).label

    return evaluate(eval_sets, predict, method=method, setting=setting.mode)


def _records_from_shots(
    pool: Dataset,
    eval_sets: Sequence[Dataset],
    shots_map: dict[str, list[ShotList]],
    scorer: ScorerClient,
    spec: PromptSpec,
    method: str,
) -> list[EvalRecord]:
    """ICL accuracy per language from already-retrieved shot lists."""
    by_query = {
        name: {sl.query_id: sl for sl in shot_lists}
        for name, shot_lists in shots_map.items()
    }

    def predict(ds: Dataset, ex: Example) -> str:
        shots = by_query[ds.name][ex.id]
        return icl_predict(ex, shots, scorer, spec, pool.label_set).label

    return evaluate(eval_sets, predict, method=method)


def knn_records(
    pool: Dataset,
    pool_store: EmbeddingStore,
    head: RetrievalHead | None,
    eval_sets: Sequence[Dataset],
    eval_stores: dict[str, EmbeddingStore],
    setting: RetrievalSetting,
    method: str = "knn",
) -> list[EvalRecord]:
    """Per-language majority-vote accuracy over retrieved neighbours."""

    def predict(ds: Dataset, ex: Example) -> str:
        store = eval_stores[ds.name]
        shots = retrieve(
            store.vector(ex.id), head, pool, pool_store, setting, query_id=ex.id
        )
        return knn_predict(shots, label_set=pool.label_set)

    return evaluate(eval_sets, predict, method=method, setting=setting.mode)


@dataclass
class SelftestReport:
    seed: int
    identity_macro: float
    trained_macro: float
    log: TrainingLog
    pair_counts: tuple[int, int]
    lines: list[str]
    elapsed: float = 0.0

    @property
    def delta(self) -> float:
        return self.trained_macro - self.identity_macro

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


SELFTEST_TRAINER = TrainerConfig(
    epochs=50,
    batch_size=16,
    learning_rate=0.02,
    temperature=0.05,
    seed=0,
)


def run_selftest(
    seed: int = 0,
    workdir: str | Path | None = None,
    k: int = 10,
    trainer: TrainerConfig | None = None,
) -> SelftestReport:
    """Mock end-to-end pipeline on the synthetic world, through files.

    Compares trained-head retrieval against the raw-embedding baseline on
    label-agnostic top-1 label match, scored through 1-shot prompting with
    the similarity-gated mock.
    """
    started = time.monotonic()
    world = make_world(seed)
    cfg = replace(trainer or SELFTEST_TRAINER, seed=seed)
    scorer = mock_scorer("similarity-gated")
    spec = PromptSpec()
    setting = RetrievalSetting(mode="label_agnostic", n_shots=1)

    stage_dir = Path(workdir) if workdir is not None else None
    if stage_dir is not None:
        stage_dir.mkdir(parents=True, exist_ok=True)
        pool_path = stage_dir / "pool.jsonl"
        pool_emb = stage_dir / "pool.xemb"
        cand_path = stage_dir / "candidates.jsonl"
        pairs_path = stage_dir / "pairs.jsonl"
        head_path = stage_dir / "head.ckpt"
        save_dataset(world.pool, pool_path)
        save_embeddings(world.pool_store, pool_emb)
        for ds in world.eval_sets:
            save_dataset(ds, stage_dir / f"{ds.name}.jsonl")
            save_embeddings(world.eval_stores[ds.name], stage_dir / f"{ds.name}.xemb")
        stage_mine(pool_path, pool_emb, k, cand_path)
        positives, negatives = stage_construct(
            pool_path, cand_path, pairs_path, scorer, spec
        )
        log = stage_train(pairs_path, pool_emb, head_path, cfg)

        def records_for(variant: str, head_arg: Path | None) -> list[EvalRecord]:
            shots_map = {}
            for ds in world.eval_sets:
                out = stage_dir / f"shots_{ds.name}_{variant}.jsonl"
                stage_retrieve(
                    stage_dir / f"{ds.name}.xemb",
                    pool_path,
                    pool_emb,
                    setting,
                    out,
                    head_path=head_arg,
                    query_path=stage_dir / f"{ds.name}.jsonl",
                )
                shots_map[ds.name] = load_shots(out, world.pool)
            return _records_from_shots(
                world.pool, world.eval_sets, shots_map, scorer, spec, variant
            )

        identity = records_for("identity", None)
        trained = records_for("trained", head_path)
    else:
        candidates = mine_candidates(world.pool, world.pool_store, k)
        pairs = construct_pairs(world.pool, candidates, scorer, spec)
        positives = sum(1 for p in pairs if p.polarity == "positive")
        negatives = len(pairs) - positives
        head, log = train(pairs, world.pool_store, cfg)
        identity = icl_records(
            world.pool, world.pool_store, None, world.eval_sets, world.eval_stores,
            setting, scorer, spec, method="identity",
        )
        trained = icl_records(
            world.pool, world.pool_store, head, world.eval_sets, world.eval_stores,
            setting, scorer, spec, method="trained",
        )
    identity_macro = macro_average(identity)
    trained_macro = macro_average(trained)
    elapsed = time.monotonic() - started

    lines = [
        f"selftest seed={seed}",
        f"pool={world.pool.name} n={len(world.pool.examples)} classes={len(world.label_set)}",
        "eval languages: " + ", ".join(ds.name for ds in world.eval_sets),
        f"mined {len(world.pool.examples)} candidate sets (k={k})",
        f"constructed {positives + negatives} pairs: {positives} positive, {negatives} negative",
        f"trainable queries: {log.trained_queries} ({log.skipped_queries} skipped)",
        f"epoch  1 mean loss {log.epoch_losses[0]:.6f}",
        f"epoch {len(log.epoch_losses):2d} mean loss {log.epoch_losses[-1]:.6f}",
    ]
    for rec in identity + trained:
        lines.append(
            f"{rec.method} {rec.language} top-1 label match {100.0 * rec.accuracy:.2f}"
        )
    lines += [
        f"identity macro top-1 label match {100.0 * identity_macro:.2f}",
        f"trained macro top-1 label match {100.0 * trained_macro:.2f}",
        f"delta {100.0 * (trained_macro - identity_macro):+.2f}pp",
    ]
    return SelftestReport(
        seed=seed,
        identity_macro=identity_macro,
        trained_macro=trained_macro,
        log=log,
        pair_counts=(positives, negatives),
        lines=lines,
        elapsed=elapsed,
    )


def pipeline_run_for_k(
    pool: Dataset,
    pool_store: EmbeddingStore,
    eval_sets: Sequence[Dataset],
    eval_stores: dict[str, EmbeddingStore],
    scorer: ScorerClient,
    spec: PromptSpec,
    setting: RetrievalSetting,
    trainer: TrainerConfig,
) -> Callable[[int], float]:
    """Per-k closure for sweep_k: re-mine, re-label, re-train, re-evaluate."""

    def run(k: int) -> float:
        candidates = mine_candidates(pool, pool_store, k)
        pairs = construct_pairs(pool, candidates, scorer, spec)
        head, _ = train(pairs, pool_store, trainer)
        records = icl_records(
            pool, pool_store, head, eval_sets, eval_stores, setting, scorer, spec
        )
        return macro_average(records)

    return run


def selftest_run_for_k(
    seed: int = 0,
    trainer: TrainerConfig | None = None,
) -> tuple[Callable[[int], float], int]:
    """Build the per-k pipeline closure for sweep_k on the synthetic world.

    Returns the closure and the pool size used for clamping.
    """
    world = make_world(seed)
    run = pipeline_run_for_k(
        world.pool,
        world.pool_store,
        world.eval_sets,
        world.eval_stores,
        mock_scorer("similarity-gated"),
        PromptSpec(),
        RetrievalSetting(mode="label_agnostic", n_shots=1),
        replace(trainer or SELFTEST_TRAINER, seed=seed),
    )
    return run, len(world.pool.examples)
