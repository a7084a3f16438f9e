"""Per-language accuracy, macro-averaging, and the shot / k / layer sweeps.

Accuracies are carried as exact (correct, total) counts and only formatted
to two decimals at report emission, so aggregate numbers do not drift
through repeated rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .corpus import Dataset, Example
from .embedding import EmbeddingStore
from .retrieval import RetrievalSetting, icl_predict, knn_predict, retrieve
from .scorer import PromptSpec, ScorerClient
from .trainer import RetrievalHead

SWEEP_AXES = ("shots", "k", "layer")


class EvalError(RuntimeError):
    """A prediction failed or sweep input is invalid."""


@dataclass(frozen=True)
class EvalRecord:
    language: str
    method: str
    setting: str
    correct: int
    total: int

    def __post_init__(self) -> None:
        if self.total < 1 or not (0 <= self.correct <= self.total):
            raise EvalError(f"bad counts {self.correct}/{self.total} for {self.language!r}")

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


@dataclass
class SweepResult:
    axis: str
    points: list[tuple[int, float]]  # (value, macro accuracy)
    method: str = ""
    notes: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise EvalError(f"unknown sweep axis {self.axis!r}")
        values = [v for v, _ in self.points]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise EvalError(f"sweep values must be strictly increasing, got {values}")


def evaluate(
    eval_sets: Sequence[Dataset],
    predict: Callable[[Dataset, Example], str],
    method: str,
    setting: str = "",
) -> list[EvalRecord]:
    """Exact-match accuracy of ``predict`` on every eval set, one record per
    language. A failing prediction aborts that language with a diagnostic
    naming the example."""
    records = []
    for ds in eval_sets:
        if not ds.examples:
            raise EvalError(f"eval set {ds.name!r} has no examples")
        correct = 0
        for ex in ds.examples:
            try:
                predicted = predict(ds, ex)
            except Exception as err:
                raise EvalError(
                    f"evaluation of {ds.language!r} aborted on example {ex.id!r}: {err}"
                ) from err
            if predicted == ex.label:
                correct += 1
        records.append(
            EvalRecord(
                language=ds.language,
                method=method,
                setting=setting,
                correct=correct,
                total=len(ds.examples),
            )
        )
    return records


def macro_average(records: Iterable[EvalRecord | float]) -> float:
    """Unweighted mean over per-language accuracies (records or raw values)."""
    values = [r.accuracy if isinstance(r, EvalRecord) else float(r) for r in records]
    if not values:
        raise EvalError("macro_average of no records")
    return sum(values) / len(values)


def _check_sweep_values(values: Sequence[int]) -> list[int]:
    if not values:
        raise EvalError("empty sweep range")
    if len(set(values)) != len(values):
        raise EvalError("duplicate sweep point")
    return sorted(values)


def _knn_macro(
    pool: Dataset,
    pool_store: EmbeddingStore,
    eval_sets: Sequence[Dataset],
    eval_stores: dict[str, EmbeddingStore],
    head: RetrievalHead | None,
    n_shots: int,
) -> float:
    setting = RetrievalSetting(mode="label_agnostic", n_shots=n_shots)

    def predict(ds: Dataset, ex: Example) -> str:
        shots = retrieve(
            eval_stores[ds.name].vector(ex.id),
            head,
            pool,
            pool_store,
            setting,
            query_id=ex.id,
        )
        return knn_predict(shots, label_set=pool.label_set)

    return macro_average(evaluate(eval_sets, predict, method="knn"))


def sweep_shots(
    shot_counts: Sequence[int],
    pool: Dataset,
    pool_store: EmbeddingStore,
    eval_sets: Sequence[Dataset],
    eval_stores: dict[str, EmbeddingStore],
    head: RetrievalHead | None = None,
    scorer: ScorerClient | None = None,
    spec: PromptSpec | None = None,
    knn: bool = True,
    icl: bool = True,
) -> list[SweepResult]:
    """Macro accuracy of KNN and/or ICL at each shot count (label-agnostic).

    ``eval_stores`` maps eval-set name to the store holding its query
    vectors.
    """
    counts = _check_sweep_values(shot_counts)
    sweeps = []
    if knn:
        points = [(n, _knn_macro(pool, pool_store, eval_sets, eval_stores, head, n)) for n in counts]
        sweeps.append(SweepResult(axis="shots", points=points, method="knn"))
    if icl:
        if scorer is None or spec is None:
            raise EvalError("icl sweep needs a scorer and a prompt spec")
        points = []
        for n in counts:
            setting = RetrievalSetting(mode="label_agnostic", n_shots=n)

            def predict(ds: Dataset, ex: Example, _setting: RetrievalSetting = setting) -> str:
                shots = retrieve(
                    eval_stores[ds.name].vector(ex.id),
                    head,
                    pool,
                    pool_store,
                    _setting,
                    query_id=ex.id,
                )
                return icl_predict(ex, shots, scorer, spec, pool.label_set).label
            points.append((n, macro_average(evaluate(eval_sets, predict, method="icl"))))
        sweeps.append(SweepResult(axis="shots", points=points, method="icl"))
    return sweeps


def sweep_k(
    k_values: Sequence[int],
    pool_size: int,
    run_for_k: Callable[[int], float],
) -> SweepResult:
    """Macro accuracy of the full construct-train-evaluate pipeline per k.

    k beyond the pool is clamped to |pool| - 1 and flagged in the notes.
    """
    values = _check_sweep_values(k_values)
    points = []
    notes: dict[int, str] = {}
    for k in values:
        effective = min(k, pool_size - 1)
        if effective != k:
            notes[k] = f"clamped to {effective} (pool size {pool_size})"
        points.append((k, run_for_k(effective)))
    return SweepResult(axis="k", points=points, method="icl", notes=notes)


def sweep_layers(
    layer_stores: Sequence[tuple[int, EmbeddingStore]],
    pool: Dataset,
    eval_sets: Sequence[Dataset],
    n_shots: int = 10,
) -> tuple[SweepResult, int]:
    """10-shot KNN macro accuracy per layer store; also returns the argmax
    layer (ties go to the lower layer index).

    Each store must cover both the pool ids and every eval id.
    """
    if not layer_stores:
        raise EvalError("empty layer sweep")
    layers = [layer for layer, _ in layer_stores]
    if len(set(layers)) != len(layers):
        raise EvalError("duplicate sweep point")
    points = []
    for layer, store in sorted(layer_stores, key=lambda item: item[0]):
        missing = [ds.name for ds in eval_sets for ex in ds.examples if ex.id not in store]
        if missing:
            raise EvalError(f"layer {layer} store is missing eval ids (set {missing[0]!r})")
        eval_stores = {ds.name: store for ds in eval_sets}
        points.append((layer, _knn_macro(pool, store, eval_sets, eval_stores, None, n_shots)))
    best_layer = max(points, key=lambda item: (item[1], -item[0]))[0]
    return SweepResult(axis="layer", points=points, method="knn"), best_layer
