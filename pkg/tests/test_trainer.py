import json
import struct

import numpy as np
import pytest

from xampler.dataconstruct import TrainingPair
from xampler.trainer import (
    AdamWConfig,
    OptimizerState,
    RetrievalHead,
    TrainerConfig,
    TrainingError,
    adamw_step,
    contrastive_loss,
    encode,
    load_head,
    save_head,
    train,
)

from conftest import make_store


def scalar_forward(W, b, x, activation):
    """Per-entry reimplementation of the head, no vectorized ops."""
    d_out, d_in = len(W), len(W[0])
    pre = []
    for i in range(d_out):
        acc = b[i]
        for j in range(d_in):
            acc += W[i][j] * x[j]
        pre.append(acc)
    import math

    z = [math.tanh(v) for v in pre] if activation == "tanh" else pre
    norm = math.sqrt(sum(v * v for v in z))
    return [v / norm for v in z]


def test_identity_head_is_l2_normalization():
    head = RetrievalHead.identity(3)
    out = encode(head, [3.0, 0.0, 4.0])
    assert out == pytest.approx([0.6, 0.0, 0.8])


@pytest.mark.parametrize("activation", ["identity", "tanh"])
def test_encode_matches_scalar_loop(rng, activation):
    for _ in range(10):
        W = rng.normal(size=(3, 5))
        b = rng.normal(size=3)
        x = rng.normal(size=5)
        head = RetrievalHead(W=W, b=b, activation=activation)
        got = encode(head, x)
        want = scalar_forward(W.tolist(), b.tolist(), x.tolist(), activation)
        assert got == pytest.approx(want, abs=1e-12)
        assert np.linalg.norm(got) == pytest.approx(1.0)


def test_head_validation():
    with pytest.raises(TrainingError, match="bad head shapes"):
        RetrievalHead(W=np.eye(3), b=np.zeros(2))
    with pytest.raises(TrainingError, match="unknown activation"):
        RetrievalHead(W=np.eye(2), b=np.zeros(2), activation="relu")
    with pytest.raises(TrainingError, match="non-finite"):
        RetrievalHead(W=np.array([[np.nan]]), b=np.zeros(1))
    with pytest.raises(TrainingError, match="expected base of dim 2"):
        encode(RetrievalHead.identity(2), [1.0, 2.0, 3.0])


def test_zero_vector_refused():
    head = RetrievalHead.identity(2)
    with pytest.raises(TrainingError, match="zero norm"):
        encode(head, [0.0, 0.0])


def test_head_copy_is_independent():
    head = RetrievalHead.identity(2)
    clone = head.copy()
    clone.W[0, 0] = 5.0
    assert head.W[0, 0] == 1.0


def test_loss_zero_without_negatives(rng):
    head = RetrievalHead.identity(4)
    loss, _ = contrastive_loss(head, rng.normal(size=4), rng.normal(size=4), [], tau=0.05)
    assert loss == 0.0


def test_loss_ln2_when_positive_and_negative_tie():
    head = RetrievalHead.identity(2)
    q = np.array([1.0, 0.0])
    pos = np.array([0.0, 1.0])
    neg = np.array([0.0, -1.0])
    loss, _ = contrastive_loss(head, q, pos, [neg], tau=0.05)
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)


def test_loss_validation(rng):
    head = RetrievalHead.identity(3)
    with pytest.raises(TrainingError, match="temperature"):
        contrastive_loss(head, rng.normal(size=3), rng.normal(size=3), [], tau=0.0)
    with pytest.raises(TrainingError, match="dimension mismatch"):
        contrastive_loss(head, rng.normal(size=4), rng.normal(size=4), [], tau=0.1)


def numeric_grads(head, q, pos, negs, tau, h=1e-6):
    def f():
        return contrastive_loss(head, q, pos, negs, tau)[0]

    gw = np.zeros_like(head.W)
    for idx in np.ndindex(*head.W.shape):
        orig = head.W[idx]
        head.W[idx] = orig + h
        up = f()
        head.W[idx] = orig - h
        down = f()
        head.W[idx] = orig
        gw[idx] = (up - down) / (2.0 * h)
    gb = np.zeros_like(head.b)
    for i in range(head.b.shape[0]):
        orig = head.b[i]
        head.b[i] = orig + h
        up = f()
        head.b[i] = orig - h
        down = f()
        head.b[i] = orig
        gb[i] = (up - down) / (2.0 * h)
    return gw, gb


def max_rel_err(analytic, numeric):
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max(initial=0.0))


@pytest.mark.parametrize("activation", ["identity", "tanh"])
@pytest.mark.parametrize("n_neg", [0, 1, 3])
def test_analytic_gradients_match_finite_differences(rng, activation, n_neg):
    for _ in range(4):
        head = RetrievalHead(
            W=rng.normal(size=(3, 4)), b=rng.normal(scale=0.1, size=3), activation=activation
        )
        q = rng.normal(size=4)
        pos = rng.normal(size=4)
        negs = [rng.normal(size=4) for _ in range(n_neg)]
        tau = float(rng.uniform(0.05, 1.0))
        _, (gw, gb) = contrastive_loss(head, q, pos, negs, tau)
        nw, nb = numeric_grads(head, q, pos, negs, tau)
        assert max_rel_err(gw, nw) < 1e-4
        assert max_rel_err(gb, nb) < 1e-4


def run_quadratic_trace(weight_decay, steps=10):
    """theta <- AdamW steps on f(theta) = theta^2 from theta0 = 1, lr 0.1."""
    theta = np.array([1.0])
    state = OptimizerState.zeros_like([theta])
    cfg = AdamWConfig(weight_decay=weight_decay)
    trace = []
    for _ in range(steps):
        grad = np.array([2.0 * theta[0]])
        adamw_step([theta], [grad], state, lr=0.1, cfg=cfg)
        trace.append(float(theta[0]))
    return trace


# Hand-verified traces for the quadratic above (beta1 0.9, beta2 0.999,
# eps 1e-8), computed step by step with scalar arithmetic.
TRACE_WD0 = [
    0.9000000005,
    0.8004122286917928,
    0.7015862729460303,
    0.603939060573746,
    0.507963659264342,
    0.4142364559936619,
    0.323420704939102,
    0.23626372452104183,
    0.15358456007036356,
    0.07624915560691216,
]
TRACE_WD001 = [
    0.8990000005,
    0.7985190271685216,
    0.6989111831582323,
    0.6005985741595428,
    0.5040800900879452,
    0.40993843677092895,
    0.31884333374747564,
    0.23154807743380879,
    0.14887623009812,
    0.07169549708798667,
]


def test_adamw_matches_hand_trace_without_decay():
    trace = run_quadratic_trace(weight_decay=0.0)
    assert trace == pytest.approx(TRACE_WD0, abs=1e-12)


def test_adamw_matches_hand_trace_with_decay():
    trace = run_quadratic_trace(weight_decay=0.01)
    assert trace == pytest.approx(TRACE_WD001, abs=1e-12)


def test_adamw_first_step_moves_by_lr_signed(rng):
    p = rng.normal(size=4)
    before = p.copy()
    g = rng.normal(size=4)
    state = OptimizerState.zeros_like([p])
    adamw_step([p], [g], state, lr=0.01, cfg=AdamWConfig(weight_decay=0.0))
    # bias correction cancels on step 1, so the update is ~ -lr * sign(g)
    assert p == pytest.approx(before - 0.01 * np.sign(g), abs=1e-6)


def test_adamw_zero_grad_zero_decay_is_fixed_point():
    p = np.array([1.25, -3.5, 0.0])
    before = p.tobytes()
    state = OptimizerState.zeros_like([p])
    for _ in range(5):
        adamw_step([p], [np.zeros(3)], state, lr=0.1, cfg=AdamWConfig(weight_decay=0.0))
    assert p.tobytes() == before


def test_adamw_rejects_bad_input():
    p = np.ones(2)
    state = OptimizerState.zeros_like([p])
    with pytest.raises(TrainingError, match="non-finite gradient"):
        adamw_step([p], [np.array([np.inf, 0.0])], state, lr=0.1, cfg=AdamWConfig())
    with pytest.raises(TrainingError, match="arity"):
        adamw_step([p], [], state, lr=0.1, cfg=AdamWConfig())
    with pytest.raises(TrainingError, match="betas"):
        AdamWConfig(beta1=1.0)


def two_cluster_pairs(rng, per_class=8, dim=6):
    """Class signal in dim 0, noise everywhere else; same-class positives."""
    ids, rows, pairs = [], [], []
    for c, sign in enumerate((1.0, -1.0)):
        for i in range(per_class):
            ids.append(f"c{c}-{i}")
            vec = rng.normal(size=dim)
            vec[0] = sign * 0.5 + rng.normal(scale=0.05)
            rows.append(vec)
    for c in range(2):
        mine = [f"c{c}-{i}" for i in range(per_class)]
        other = [f"c{1 - c}-{i}" for i in range(per_class)]
        for qid in mine:
            rank = 1
            for cid in mine:
                if cid == qid:
                    continue
                pairs.append(TrainingPair(qid, cid, "positive", rank, 0.9))
                rank += 1
            for cid in other:
                pairs.append(TrainingPair(qid, cid, "negative", rank, 0.1))
                rank += 1
    return pairs, make_store(ids, np.array(rows))


def test_training_is_deterministic(rng):
    pairs, store = two_cluster_pairs(rng)
    cfg = TrainerConfig(epochs=3, batch_size=4, learning_rate=0.02, seed=11)
    head1, log1 = train(pairs, store, cfg)
    head2, log2 = train(pairs, store, cfg)
    assert head1.W.tobytes() == head2.W.tobytes()
    assert head1.b.tobytes() == head2.b.tobytes()
    assert log1.epoch_losses == log2.epoch_losses


def test_loss_decreases_on_separable_clusters(rng):
    pairs, store = two_cluster_pairs(rng)
    cfg = TrainerConfig(epochs=30, batch_size=8, learning_rate=0.02, seed=5)
    head, log = train(pairs, store, cfg)
    assert log.epoch_losses[-1] < log.epoch_losses[0]
    assert log.trained_queries == 16
    assert log.skipped_queries == 0
    assert log.steps == 30 * 2  # 16 queries / batch 8


def test_queries_without_positives_are_skipped(rng):
    pairs, store = two_cluster_pairs(rng, per_class=4)
    lonely = [p for p in pairs if not (p.query_id == "c0-0" and p.polarity == "positive")]
    cfg = TrainerConfig(epochs=2, batch_size=4, learning_rate=0.02, seed=0)
    _, log = train(lonely, store, cfg)
    assert log.trained_queries == 7
    assert log.skipped_queries == 1


def test_untrainable_pair_set(rng):
    pairs, store = two_cluster_pairs(rng, per_class=2)
    negatives = [p for p in pairs if p.polarity == "negative"]
    with pytest.raises(TrainingError, match="untrainable pair set"):
        train(negatives, store, TrainerConfig(epochs=1))


def test_training_requires_all_embeddings(rng):
    pairs, store = two_cluster_pairs(rng, per_class=2)
    pairs.append(TrainingPair("c0-0", "ghost", "negative", 99, 0.0))
    with pytest.raises(TrainingError, match="no base embedding for id 'ghost'"):
        train(pairs, store, TrainerConfig(epochs=1))


def test_trainer_config_validation():
    with pytest.raises(TrainingError, match="temperature"):
        TrainerConfig(temperature=0.0)
    with pytest.raises(TrainingError, match="learning rate"):
        TrainerConfig(learning_rate=-1.0)
    with pytest.raises(TrainingError, match="epochs and batch size"):
        TrainerConfig(epochs=0)


def test_head_checkpoint_round_trip(tmp_path, rng):
    head = RetrievalHead(W=rng.normal(size=(4, 6)), b=rng.normal(size=4), activation="tanh")
    path = tmp_path / "head.bin"
    save_head(head, path, tau=0.07, seed=9, epoch=50)
    loaded, header = load_head(path)
    assert loaded.W.tobytes() == head.W.tobytes()
    assert loaded.b.tobytes() == head.b.tobytes()
    assert loaded.activation == "tanh"
    assert header["tau"] == 0.07
    assert header["seed"] == 9
    assert header["epoch"] == 50


def test_head_checkpoint_corruption(tmp_path, rng):
    head = RetrievalHead.identity(3)
    path = tmp_path / "head.bin"
    save_head(head, path)
    blob = path.read_bytes()

    stub = tmp_path / "stub.bin"
    stub.write_bytes(blob[:2])
    with pytest.raises(TrainingError, match="truncated head checkpoint"):
        load_head(stub)

    trimmed = tmp_path / "trimmed.bin"
    trimmed.write_bytes(blob[:-8])
    with pytest.raises(TrainingError, match="truncated payload"):
        load_head(trimmed)

    garbled = tmp_path / "garbled.bin"
    (header_len,) = struct.unpack_from("<I", blob, 0)
    garbled.write_bytes(blob[:4] + b"\xff" * header_len + blob[4 + header_len :])
    with pytest.raises(TrainingError, match="corrupt head header"):
        load_head(garbled)

    lying = tmp_path / "lying.bin"
    header = json.loads(blob[4 : 4 + header_len].decode("utf-8"))
    header["d_in"] = 7
    fake = json.dumps(header, separators=(",", ":")).encode("utf-8")
    lying.write_bytes(struct.pack("<I", len(fake)) + fake + blob[4 + header_len :])
    with pytest.raises(TrainingError, match="payload/shape mismatch"):
        load_head(lying)
