import numpy as np
import pytest

from xampler.corpus import Dataset, Example
from xampler.embedding import EmbeddingStore, Provenance


def make_examples(labels, language="eng_Latn", prefix="x"):
    return [
        Example(
            id=f"{prefix}{i:03d}",
            text=f"{label} text {i}",
            label=label,
            language=language,
        )
        for i, label in enumerate(labels)
    ]


def make_store(ids, matrix, provider="test"):
    return EmbeddingStore(
        ids=list(ids),
        matrix=np.asarray(matrix, dtype=np.float32),
        provenance=Provenance(provider=provider),
    )


def make_pool(labels, vectors, label_set=None, name="eng_Latn"):
    """Dataset + aligned EmbeddingStore from parallel labels and vectors."""
    examples = make_examples(labels)
    ds = Dataset(
        name=name,
        label_set=tuple(label_set or sorted(set(labels))),
        examples=examples,
        role="train",
    )
    return ds, make_store([ex.id for ex in examples], vectors)


def make_eval(labels, vectors, language, label_set, prefix):
    examples = make_examples(labels, language=language, prefix=prefix)
    ds = Dataset(name=language, label_set=list(label_set), examples=examples, role="eval")
    return ds, make_store([ex.id for ex in examples], np.asarray(vectors, dtype=float))


def clustered_world(rng, per_class_pool=4, per_class_eval=3):
    """Two clean clusters; every id appears in exactly one store."""

    def vecs(labels):
        rows = []
        for lab in labels:
            base = np.array([1.0, 0.0, 0.0, 0.0]) if lab == "a" else np.array([0.0, 1.0, 0.0, 0.0])
            rows.append(base + rng.normal(scale=0.05, size=4))
        return np.array(rows)

    pool_labels = ["a", "b"] * per_class_pool
    pool, pool_store = make_pool(pool_labels, vecs(pool_labels), label_set=("a", "b"), name="pool")
    eval_sets, eval_stores = [], {}
    for language, prefix in (("deu_Latn", "d"), ("swh_Latn", "s")):
        labels = ["a", "b"] * per_class_eval
        ds, store = make_eval(labels, vecs(labels), language, ("a", "b"), prefix)
        eval_sets.append(ds)
        eval_stores[ds.name] = store
    return pool, pool_store, eval_sets, eval_stores


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_label_pool():
    labels = ["science", "sports", "science", "sports"]
    vectors = [[1.0, 0.0], [0.0, 1.0], [0.9, 0.1], [0.1, 0.9]]
    return make_pool(labels, vectors, label_set=("science", "sports"))
