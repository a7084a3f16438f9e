import numpy as np
import pytest

from xampler.corpus import Dataset
from xampler.evalharness import (
    EvalError,
    EvalRecord,
    SweepResult,
    evaluate,
    macro_average,
    sweep_k,
    sweep_layers,
    sweep_shots,
)
from xampler.scorer import PromptSpec, mock_scorer

from conftest import clustered_world, make_store


def test_evaluate_counts_exactly(rng):
    _, _, eval_sets, _ = clustered_world(rng)
    wrong_on = {"d001", "s000", "s003"}

    def predict(ds, ex):
        return ("z" if ex.id in wrong_on else ex.label)

    records = evaluate(eval_sets, predict, method="stub", setting="label_agnostic")
    assert [(r.language, r.correct, r.total) for r in records] == [
        ("deu_Latn", 5, 6),
        ("swh_Latn", 4, 6),
    ]
    assert records[0].method == "stub"
    assert records[0].setting == "label_agnostic"
    assert records[0].accuracy == pytest.approx(5 / 6)


def test_evaluate_abort_names_language_and_example(rng):
    _, _, eval_sets, _ = clustered_world(rng)

    def predict(ds, ex):
        if ex.id == "d002":
            raise RuntimeError("scorer died")
        return ex.label

    with pytest.raises(EvalError, match="'deu_Latn' aborted on example 'd002'"):
        evaluate(eval_sets, predict, method="stub")


def test_evaluate_rejects_empty_set():
    empty = Dataset(name="deu_Latn", label_set=["a"], examples=[], role="eval")
    with pytest.raises(EvalError, match="has no examples"):
        evaluate([empty], lambda ds, ex: "a", method="stub")


def test_eval_record_validation():
    with pytest.raises(EvalError, match="bad counts"):
        EvalRecord("deu_Latn", "knn", "", correct=5, total=4)
    with pytest.raises(EvalError, match="bad counts"):
        EvalRecord("deu_Latn", "knn", "", correct=0, total=0)


def test_macro_average_mixes_records_and_floats():
    rec = EvalRecord("deu_Latn", "knn", "", correct=3, total=4)
    assert macro_average([rec, 0.25]) == pytest.approx(0.5)
    with pytest.raises(EvalError, match="no records"):
        macro_average([])


def test_sweep_result_validation():
    with pytest.raises(EvalError, match="unknown sweep axis"):
        SweepResult(axis="temperature", points=[(1, 0.5)])
    with pytest.raises(EvalError, match="strictly increasing"):
        SweepResult(axis="shots", points=[(3, 0.5), (3, 0.6)])


def test_sweep_k_clamps_and_sorts():
    calls = []

    def run_for_k(k):
        calls.append(k)
        return k / 10.0

    result = sweep_k([10, 2], pool_size=6, run_for_k=run_for_k)
    assert calls == [2, 5]  # sorted, then clamped to pool size - 1
    assert result.points == [(2, 0.2), (10, 0.5)]
    assert result.notes == {10: "clamped to 5 (pool size 6)"}
    assert result.axis == "k"


def test_sweep_value_validation():
    with pytest.raises(EvalError, match="empty sweep range"):
        sweep_k([], pool_size=5, run_for_k=lambda k: 0.0)
    with pytest.raises(EvalError, match="duplicate sweep point"):
        sweep_k([2, 2], pool_size=5, run_for_k=lambda k: 0.0)


def test_sweep_shots_knn_and_icl_on_clean_clusters(rng):
    pool, pool_store, eval_sets, eval_stores = clustered_world(rng)
    sweeps = sweep_shots(
        [3, 1],
        pool,
        pool_store,
        eval_sets,
        eval_stores,
        scorer=mock_scorer("similarity-gated"),
        spec=PromptSpec(),
    )
    assert [s.method for s in sweeps] == ["knn", "icl"]
    for sweep in sweeps:
        assert sweep.axis == "shots"
        assert [n for n, _ in sweep.points] == [1, 3]
        for _, macro in sweep.points:
            assert macro == 1.0  # clusters are cleanly separable


def test_sweep_shots_icl_requires_scorer(rng):
    pool, pool_store, eval_sets, eval_stores = clustered_world(rng)
    with pytest.raises(EvalError, match="icl sweep needs a scorer"):
        sweep_shots([1], pool, pool_store, eval_sets, eval_stores, knn=False)


def merged_layer_store(rng, pool, pool_store, eval_sets, eval_stores, shuffle=False):
    ids = [ex.id for ex in pool.examples]
    rows = [pool_store.vector(i) for i in ids]
    for ds in eval_sets:
        for ex in ds.examples:
            ids.append(ex.id)
            rows.append(eval_stores[ds.name].vector(ex.id))
    rows = np.array(rows)
    if shuffle:
        rows = rows[rng.permutation(len(rows))]
    return make_store(ids, rows)


def test_sweep_layers_prefers_informative_layer(rng):
    pool, pool_store, eval_sets, eval_stores = clustered_world(rng)
    informative = merged_layer_store(rng, pool, pool_store, eval_sets, eval_stores)
    shuffled = merged_layer_store(rng, pool, pool_store, eval_sets, eval_stores, shuffle=True)
    result, best = sweep_layers([(7, shuffled), (1, informative)], pool, eval_sets, n_shots=4)
    assert best == 1
    assert [layer for layer, _ in result.points] == [1, 7]
    acc = dict(result.points)
    assert acc[1] == 1.0
    assert acc[7] < acc[1]


def test_sweep_layers_tie_goes_to_lower_layer(rng):
    pool, pool_store, eval_sets, eval_stores = clustered_world(rng)
    store = merged_layer_store(rng, pool, pool_store, eval_sets, eval_stores)
    _, best = sweep_layers([(5, store), (3, store)], pool, eval_sets, n_shots=4)
    assert best == 3


def test_sweep_layers_validation(rng):
    pool, pool_store, eval_sets, eval_stores = clustered_world(rng)
    store = merged_layer_store(rng, pool, pool_store, eval_sets, eval_stores)
    with pytest.raises(EvalError, match="empty layer sweep"):
        sweep_layers([], pool, eval_sets)
    with pytest.raises(EvalError, match="duplicate sweep point"):
        sweep_layers([(1, store), (1, store)], pool, eval_sets)
    with pytest.raises(EvalError, match="layer 2 store is missing eval ids"):
        sweep_layers([(2, pool_store)], pool, eval_sets, n_shots=4)
