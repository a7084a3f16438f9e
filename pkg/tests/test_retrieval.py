import numpy as np
import pytest

from xampler.corpus import Example
from xampler.embedding import cosine_similarity
from xampler.retrieval import (
    RetrievalError,
    RetrievalSetting,
    ShotList,
    icl_predict,
    knn_predict,
    retrieve,
)
from xampler.scorer import PromptSpec, mock_scorer
from xampler.trainer import RetrievalHead, encode

from conftest import make_pool


def brute_force_agnostic(query_vec, pool, store, head, n, skip=()):
    scored = []
    for ex in pool.examples:
        if ex.id in skip:
            continue
        if head is None:
            s = cosine_similarity(query_vec, store.vector(ex.id))
        else:
            s = float(
                np.clip(
                    encode(head, store.vector(ex.id).astype(np.float64))
                    @ encode(head, np.asarray(query_vec, dtype=np.float64)),
                    -1.0,
                    1.0,
                )
            )
        scored.append((ex.id, s))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:n]


@pytest.mark.parametrize("use_head", [False, True])
def test_agnostic_matches_brute_force(rng, use_head):
    labels = [("a", "b", "c")[int(rng.integers(3))] for _ in range(25)]
    pool, store = make_pool(labels, rng.normal(size=(25, 6)), label_set=("a", "b", "c"))
    head = RetrievalHead(W=rng.normal(size=(4, 6)), b=np.zeros(4)) if use_head else None
    setting = RetrievalSetting("label_agnostic", n_shots=5)
    for _ in range(10):
        q = rng.normal(size=6)
        got = retrieve(q, head, pool, store, setting)
        want = brute_force_agnostic(q, pool, store, head, 5)
        assert sorted((ex.id, s) for ex, s in got.shots) == sorted(want)
        scores = [s for _, s in got.shots]
        assert scores == sorted(scores)  # ascending presentation


def test_desc_order_reverses_presentation(rng):
    labels = ["a"] * 10
    pool, store = make_pool(labels, rng.normal(size=(10, 4)), label_set=("a",))
    q = rng.normal(size=4)
    asc = retrieve(q, None, pool, store, RetrievalSetting("label_agnostic", 4, "asc"))
    desc = retrieve(q, None, pool, store, RetrievalSetting("label_agnostic", 4, "desc"))
    assert [ex.id for ex, _ in desc.shots] == [ex.id for ex, _ in asc.shots][::-1]


def test_smaller_n_is_a_subset(rng):
    labels = ["a"] * 20
    pool, store = make_pool(labels, rng.normal(size=(20, 5)), label_set=("a",))
    q = rng.normal(size=5)
    small = retrieve(q, None, pool, store, RetrievalSetting("label_agnostic", 3))
    big = retrieve(q, None, pool, store, RetrievalSetting("label_agnostic", 8))
    assert {ex.id for ex, _ in small.shots} <= {ex.id for ex, _ in big.shots}


def test_query_and_exclusions_never_retrieved(rng):
    labels = ["a"] * 8
    pool, store = make_pool(labels, rng.normal(size=(8, 3)), label_set=("a",))
    shots = retrieve(
        store.vector("x002"),
        None,
        pool,
        store,
        RetrievalSetting("label_agnostic", 5),
        query_id="x002",
        exclude_ids=["x000", "x001"],
    )
    ids = {ex.id for ex, _ in shots.shots}
    assert ids.isdisjoint({"x000", "x001", "x002"})
    assert len(ids) == 5


def test_selection_tie_prefers_ascending_id():
    pool, store = make_pool(
        ["a", "a", "a"], [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], label_set=("a",)
    )
    shots = retrieve([0.0, 1.0], None, pool, store, RetrievalSetting("label_agnostic", 1))
    assert shots.shots[0][0].id == "x001"


def test_label_aware_covers_each_class_once(rng):
    labels = ["a", "a", "b", "b", "b", "c"]
    pool, store = make_pool(labels, rng.normal(size=(6, 4)), label_set=("a", "b", "c"))
    q = rng.normal(size=4)
    shots = retrieve(q, None, pool, store, RetrievalSetting("label_aware", 3))
    assert sorted(shots.labels()) == ["a", "b", "c"]
    for ex, score in shots.shots:
        rivals = [
            cosine_similarity(q, store.vector(o.id))
            for o in pool.examples
            if o.label == ex.label
        ]
        assert score == pytest.approx(max(rivals))


def test_label_aware_needs_matching_shot_count(rng):
    pool, store = make_pool(["a", "b"], rng.normal(size=(2, 3)), label_set=("a", "b"))
    with pytest.raises(RetrievalError, match=r"n_shots == \|label_set\| \(2\)"):
        retrieve(np.ones(3), None, pool, store, RetrievalSetting("label_aware", 5))


def test_label_aware_missing_class(rng):
    pool, store = make_pool(["a", "a"], rng.normal(size=(2, 3)), label_set=("a", "b"))
    with pytest.raises(RetrievalError, match="class 'b' absent from pool"):
        retrieve(np.ones(3), None, pool, store, RetrievalSetting("label_aware", 2))


def test_setting_validation():
    with pytest.raises(RetrievalError, match="unknown retrieval mode"):
        RetrievalSetting("fuzzy", 3)
    with pytest.raises(RetrievalError, match="n_shots must be >= 1"):
        RetrievalSetting("label_agnostic", 0)
    with pytest.raises(RetrievalError, match="unknown shot order"):
        RetrievalSetting("label_agnostic", 3, shot_order="random")


def ex(i, label):
    return Example(id=f"s{i}", text=f"t{i}", label=label, language="eng_Latn")


def test_shot_list_rejects_duplicates():
    with pytest.raises(RetrievalError, match="duplicate shot ids"):
        ShotList(query_id="q", shots=[(ex(1, "a"), 0.5), (ex(1, "a"), 0.4)])


def test_knn_unanimous_and_majority():
    assert knn_predict(ShotList("q", [(ex(1, "a"), 0.9), (ex(2, "a"), 0.8)])) == "a"
    shots = ShotList("q", [(ex(1, "a"), 0.1), (ex(2, "b"), 0.9), (ex(3, "a"), 0.2)])
    assert knn_predict(shots) == "a"


def test_knn_vote_tie_breaks_on_summed_similarity():
    shots = ShotList("q", [(ex(1, "a"), 0.9), (ex(2, "b"), 0.5), (ex(3, "b"), 0.3)])
    # one "a" vote at 0.9 vs two "b" votes: b wins on votes
    assert knn_predict(shots) == "b"
    shots = ShotList("q", [(ex(1, "a"), 0.9), (ex(2, "b"), 0.5)])
    assert knn_predict(shots) == "a"  # 1-1 votes, a has the larger sum


def test_knn_full_tie_falls_back_to_label_order():
    shots = ShotList("q", [(ex(1, "a"), 0.5), (ex(2, "b"), 0.5)])
    assert knn_predict(shots, label_set=["b", "a"]) == "b"
    assert knn_predict(shots, label_set=["a", "b"]) == "a"
    assert knn_predict(shots) == "a"  # no label set: sorted label order


def test_knn_ignores_presentation_order():
    fwd = ShotList("q", [(ex(1, "a"), 0.2), (ex(2, "b"), 0.7), (ex(3, "b"), 0.1)])
    rev = ShotList("q", list(reversed(fwd.shots)))
    assert knn_predict(fwd) == knn_predict(rev)


def test_knn_needs_shots():
    with pytest.raises(RetrievalError, match="at least one shot"):
        knn_predict(ShotList("q", []))


class Recorder:
    def __init__(self):
        self.requests = []

    def score(self, request):
        self.requests.append(request)
        return [0.0] + [-1.0] * (len(request.continuations) - 1)


def test_icl_predict_meta_tracks_best_shot_not_position():
    query = Example(id="q", text="query text", label="a", language="deu_Latn")
    spec = PromptSpec()
    shots_asc = ShotList("q", [(ex(1, "b"), 0.2), (ex(2, "a"), 0.9)])
    shots_desc = ShotList("q", list(reversed(shots_asc.shots)))
    for shots in (shots_asc, shots_desc):
        rec = Recorder()
        icl_predict(query, shots, rec, spec, label_set=["a", "b"])
        meta = rec.requests[-1].meta
        assert meta.top_shot_label == "a"
        assert meta.query_label == "a"
    assert rec.requests[-1].meta.shot_labels == ("a", "b")  # desc presentation


def test_icl_predict_with_similarity_gated_mock():
    query = Example(id="q", text="txt", label="a", language="deu_Latn")
    good = ShotList("q", [(ex(1, "b"), 0.1), (ex(2, "a"), 0.8)])
    bad = ShotList("q", [(ex(1, "a"), 0.1), (ex(2, "b"), 0.8)])
    scorer = mock_scorer("similarity-gated")
    spec = PromptSpec()
    assert icl_predict(query, good, scorer, spec, ["a", "b"]).label == "a"
    assert icl_predict(query, bad, scorer, spec, ["a", "b"]).label == "b"


def test_icl_predict_zero_shots_still_scores():
    query = Example(id="q", text="txt", label="a", language="deu_Latn")
    rec = Recorder()
    pred = icl_predict(query, ShotList("q", []), rec, PromptSpec(), ["a", "b"])
    assert pred.label in {"a", "b"}
    assert rec.requests[-1].meta.top_shot_label is None
    assert rec.requests[-1].meta.shot_labels == ()
