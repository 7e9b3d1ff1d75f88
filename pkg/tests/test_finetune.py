from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scitopic.finetune import (
    Adapter,
    CollapsedAdapter,
    FineTuneConfig,
    NonFiniteError,
    TrainBatch,
    _forward,
    apply_adapter,
    batch_loss,
    loss_from_similarities,
    loss_gradient,
    similarity,
    train,
)
from scitopic.oracle import TripletJudgment, Verdict
from scitopic.sampler import Triplet


def random_batch(seed, b=4, d=6, weights=False):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 1.0, size=b) if weights else None
    return TrainBatch(rng.normal(size=(b, d)), rng.normal(size=(b, d)), rng.normal(size=(b, d)), w)


def random_adapter(seed, d_in=6, d_out=4, bias=False):
    rng = np.random.default_rng(seed + 1000)
    return Adapter(rng.normal(size=(d_out, d_in)), rng.normal(size=d_out) if bias else None)


def finite_difference(batch, adapter, config, h=1e-5):
    def f(a):
        return batch_loss(batch, config, a)
    gw = np.zeros_like(adapter.weight)
    for idx in np.ndindex(*adapter.weight.shape):
        plus, minus = adapter.copy(), adapter.copy()
        plus.weight[idx] += h
        minus.weight[idx] -= h
        gw[idx] = (f(plus) - f(minus)) / (2 * h)
    gb = None
    if adapter.bias is not None:
        gb = np.zeros_like(adapter.bias)
        for i in range(adapter.bias.size):
            plus, minus = adapter.copy(), adapter.copy()
            plus.bias[i] += h
            minus.bias[i] -= h
            gb[i] = (f(plus) - f(minus)) / (2 * h)
    return gw, gb


def test_similarity_examples():
    x = np.array([1.0, 2.0, 3.0])
    assert similarity(x, x) == pytest.approx(1.0, abs=1e-15)
    assert similarity(x, x, 0.05) == pytest.approx(0.95, abs=1e-15)
    assert similarity(np.array([1.0, 0]), np.array([0, 1.0]), 0.1) == pytest.approx(-0.1, abs=1e-15)
    with pytest.raises(CollapsedAdapter):
        similarity(np.zeros(3), x)


def test_uniform_similarities_give_log_n():
    sims = np.full((3, 6), 0.4)
    loss, per = loss_from_similarities(sims, 0.05)
    assert loss == pytest.approx(math.log(6), rel=1e-12)
    np.testing.assert_allclose(per, math.log(6), rtol=1e-12)


def test_dominant_positive_drives_loss_to_zero():
    sims = np.array([[50.0, 0, 0, 0], [0, 50.0, 0, 0]])
    loss, _ = loss_from_similarities(sims, 0.05)
    assert 0 < loss < 1e-300 or loss == 0.0


def test_two_triplet_hand_evaluation():
    # anchors (1,0),(0,1); positives (1,0),(1,1); negatives (0,1),(-1,0)
    batch = TrainBatch(np.array([[1.0, 0], [0, 1.0]]), np.array([[1.0, 0], [1.0, 1.0]]),
                       np.array([[0, 1.0], [-1.0, 0]]))
    tau, gamma = 0.5, 0.05
    r = 1 / math.sqrt(2)
    cos = [[1.0, r, 0.0, -1.0], [0.0, r, 1.0, 0.0]]
    expected = 0.0
    for i in range(2):
        num = math.exp((cos[i][i] - gamma) / tau)
        den = sum(math.exp((c - gamma) / tau) for c in cos[i])
        expected += -math.log(num / den) / 2
    cfg = FineTuneConfig(tau=tau, gamma=gamma)
    assert batch_loss(batch, cfg) == pytest.approx(expected, rel=1e-12)


def test_entropy_weighted_mean():
    batch = TrainBatch(np.array([[1.0, 0], [0, 1.0]]), np.array([[1.0, 0], [1.0, 1.0]]),
                       np.array([[0, 1.0], [-1.0, 0]]), weights=np.array([0.2, 0.6]))
    cfg = FineTuneConfig(tau=0.5)
    *_, sims = _forward(Adapter.identity(2), batch, cfg)
    _, per = loss_from_similarities(sims, cfg.tau)
    assert batch_loss(batch, cfg) == pytest.approx(0.25 * per[0] + 0.75 * per[1], rel=1e-12)
    off = FineTuneConfig(tau=0.5, entropy_weighting=False)
    assert batch_loss(batch, off) == pytest.approx(per.mean(), rel=1e-12)


def test_batch_size_errors():
    with pytest.raises(ValueError):
        FineTuneConfig(batch_size=1)
    with pytest.raises(ValueError):
        batch_loss(random_batch(0, b=1), FineTuneConfig())


@pytest.mark.parametrize("seed", range(25))
def test_gradient_matches_finite_differences(seed):
    batch = random_batch(seed, weights=seed % 2 == 0)
    adapter = random_adapter(seed, bias=seed % 3 == 0)
    cfg = FineTuneConfig(tau=0.3 + 0.1 * (seed % 4), gamma=0.05, margin_mode="uniform" if seed % 5 else "negatives")
    _, gw, gb = loss_gradient(batch, adapter, cfg)
    fw, fb = finite_difference(batch, adapter, cfg)
    assert np.max(np.abs(gw - fw) / np.maximum(1.0, np.abs(fw))) < 1e-5
    if gb is not None:
        assert np.max(np.abs(gb - fb) / np.maximum(1.0, np.abs(fb))) < 1e-5


def test_near_uniform_softmax_small_gradient():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    a = q[:4]
    batch = TrainBatch(a, a.copy(), q[4:])
    _, gw, _ = loss_gradient(batch, Adapter.identity(8), FineTuneConfig(tau=1e6))
    assert np.linalg.norm(gw) < 1e-6


def test_uniform_margin_shift_invariance():
    batch = random_batch(3)
    adapter = random_adapter(3)
    l0, g0, _ = loss_gradient(batch, adapter, FineTuneConfig(gamma=0.0))
    l5, g5, _ = loss_gradient(batch, adapter, FineTuneConfig(gamma=0.5))
    assert abs(l0 - l5) < 1e-12
    np.testing.assert_allclose(g0, g5, rtol=0, atol=1e-12)


def test_negatives_margin_changes_loss():
    batch = random_batch(3)
    adapter = random_adapter(3)
    l0 = batch_loss(batch, FineTuneConfig(gamma=0.0, margin_mode="negatives"), adapter)
    l5 = batch_loss(batch, FineTuneConfig(gamma=0.5, margin_mode="negatives"), adapter)
    assert l5 < l0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), b=st.integers(2, 6))
def test_loss_positive(seed, b):
    assert batch_loss(random_batch(seed, b=b), FineTuneConfig(), random_adapter(seed)) > 0


def test_nonfinite_gradient_reports_location():
    batch = random_batch(0)
    adapter = random_adapter(0)
    adapter.weight[1, 2] = np.inf
    with pytest.raises((NonFiniteError, CollapsedAdapter, FloatingPointError)):
        with np.errstate(all="ignore"):
            loss_gradient(batch, adapter, FineTuneConfig())
    with pytest.raises(NonFiniteError, match=r"\(1, 2\)"):
        adapter.check_finite()


def test_apply_adapter_contracts():
    x = np.random.default_rng(0).normal(size=(5, 6))
    np.testing.assert_array_equal(apply_adapter(Adapter.identity(6), x), x)
    zero = apply_adapter(Adapter(np.zeros((4, 6))), x)
    assert not zero.any()
    with pytest.raises(CollapsedAdapter):
        similarity(zero[0], zero[1])
    a = random_adapter(1)
    full = apply_adapter(a, x)
    other = x.copy()
    other[1:] += 10.0
    # row 0 is unaffected by changes to the other rows
    assert apply_adapter(a, other)[0].tobytes() == full[0].tobytes()
    for i in range(5):
        np.testing.assert_allclose(apply_adapter(a, x[i:i + 1])[0], full[i], rtol=1e-12)
    with pytest.raises(ValueError):
        apply_adapter(a, np.zeros((2, 5)))


def test_adapter_round_trip(tmp_path):
    a = random_adapter(2, bias=True)
    a.save(tmp_path / "a.json", seed=7, config=FineTuneConfig())
    b = Adapter.load(tmp_path / "a.json")
    assert b.weight.tobytes() == a.weight.tobytes() and b.bias.tobytes() == a.bias.tobytes()
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        Adapter.load(tmp_path / "bad.json")


def judged_clusters(n_per=24, d=6, seed=0, spread=0.8):
    """Two noisy clusters with label-oracle judgments: positive shares the anchor's cluster."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(2, d)) * 1.5
    labels = np.repeat([0, 1], n_per)
    x = centers[labels] + rng.normal(0, spread, size=(labels.size, d))
    ids = [f"e{i}" for i in range(labels.size)]
    judgments = []
    for i in range(labels.size):
        same = [j for j in range(labels.size) if labels[j] == labels[i] and j != i]
        other = np.flatnonzero(labels != labels[i])
        t = Triplet(ids[i], ids[int(rng.choice(same))], ids[int(rng.choice(other))], 0, 1)
        judgments.append(TripletJudgment(t, Verdict.CAND1, "1"))
    return judgments, x, ids


def test_zero_epochs_is_identity():
    judgments, x, ids = judged_clusters()
    res = train(judgments, x, ids, FineTuneConfig(epochs=0))
    np.testing.assert_array_equal(res.adapter.weight, np.eye(x.shape[1]))
    assert res.epoch_losses == [] and res.best_epoch is None


def test_training_lowers_loss_and_is_deterministic():
    judgments, x, ids = judged_clusters()
    ent = {j.anchor: 0.5 + 0.01 * k for k, j in enumerate(judgments)}
    cfg = FineTuneConfig(epochs=20, lr=0.05, batch_size=8, tau=0.1, seed=3)
    r1 = train(judgments, x, ids, cfg, entropies=ent)
    r2 = train(judgments, x, ids, cfg, entropies=ent)
    assert r1.adapter.weight.tobytes() == r2.adapter.weight.tobytes()
    assert r1.epoch_losses[-1] < r1.epoch_losses[0]
    assert min(r1.epoch_losses) == r1.epoch_losses[r1.best_epoch - 1]


def test_train_rejects_neither_and_small_input():
    judgments, x, ids = judged_clusters()
    bad = judgments[:20] + [TripletJudgment(judgments[0].triplet, Verdict.NEITHER, "Neither")]
    with pytest.raises(ValueError, match="Neither"):
        train(bad, x, ids, FineTuneConfig())
    with pytest.raises(ValueError, match="lower batch_size"):
        train(judgments[:3], x, ids, FineTuneConfig(batch_size=4))
