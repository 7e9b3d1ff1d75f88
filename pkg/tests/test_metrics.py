from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from scitopic.metrics import (
    CooccurrenceStats,
    MetricsReport,
    adjusted_rand_index,
    calinski_harabasz,
    clustering_accuracy,
    davies_bouldin,
    labeled_metrics,
    normalized_mutual_info,
    topic_coherence,
    topic_coherence_scores,
    topic_diversity,
)

FOUR = np.array([[0.0], [0.1], [10.0], [10.1]])
FOUR_LABELS = [0, 0, 1, 1]


def test_npmi_always_cooccurring_pair():
    docs = [{"a", "b"}, {"a", "b"}, {"c"}, {"d"}]
    stats = CooccurrenceStats.from_documents(docs)
    assert stats.npmi("a", "b") == pytest.approx(1.0, rel=1e-9)
    # one pair over two words: 1 * ln(0.5) / 2
    score = topic_coherence_scores([["a", "b"]], stats)[0]
    assert score == pytest.approx(-math.log(2) / 2, rel=1e-9)
    assert score * 2 == pytest.approx(-math.log(2), rel=1e-9)


def test_independent_words_contribute_zero():
    docs = [{"a", "b"}, {"a"}, {"b"}, set()]
    stats = CooccurrenceStats.from_documents(docs)
    assert abs(stats.npmi("a", "b")) < 1e-9
    assert abs(topic_coherence([["a", "b"]], stats)) < 1e-9


def test_single_word_topic_scores_zero():
    stats = CooccurrenceStats.from_documents([{"a"}])
    assert topic_coherence_scores([["a"]], stats) == [0.0]


def test_absent_word_flagged():
    flags: list[str] = []
    stats = CooccurrenceStats.from_documents([{"a", "b"}, {"b"}])
    value = topic_coherence([["a", "zzz"]], stats, flags=flags)
    assert math.isfinite(value) and any("zzz" in f for f in flags)


def test_coherence_matches_oracle():
    rng = np.random.default_rng(0)
    vocab = [f"w{i}" for i in range(12)]
    docs = [set(rng.choice(vocab, size=rng.integers(1, 6), replace=False).tolist()) for _ in range(40)]
    topics = [vocab[:4], vocab[4:9], vocab[9:]]
    stats = CooccurrenceStats.from_documents(docs)
    assert topic_coherence(topics, stats) == pytest.approx(oracles.coherence(topics, docs), rel=1e-9)


def test_npmi_mean_mode():
    docs = [{"a", "b"}, {"a", "b"}, {"c"}, {"d"}]
    stats = CooccurrenceStats.from_documents(docs)
    assert topic_coherence([["a", "b"]], stats, mode="npmi-mean") == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(ValueError):
        topic_coherence([["a"]], stats, mode="cv")


def test_pair_freq_bounded_by_doc_freq():
    rng = np.random.default_rng(1)
    docs = [set(rng.choice(list("abcdef"), size=3, replace=False).tolist()) for _ in range(30)]
    stats = CooccurrenceStats.from_documents(docs)
    for pair, c in stats.pair_freq.items():
        assert c <= min(stats.doc_freq[w] for w in pair)


def test_diversity_examples():
    assert topic_diversity([["a", "b", "c"], ["d", "e", "f"]], 3) == 1.0
    assert topic_diversity([["a", "b", "c"], ["c", "d", "e"]], 3) == 5 / 6
    for T in range(1, 6):
        assert topic_diversity([["x", "y", "z"]] * T, 3) == 1 / T


def test_diversity_short_topic_flagged():
    flags: list[str] = []
    assert topic_diversity([["a", "b"], ["c", "d", "e"]], 3, flags) == 1.0
    assert flags


@settings(max_examples=60, deadline=None)
@given(topics=st.lists(st.lists(st.sampled_from("abcdefghij"), min_size=3, max_size=3), min_size=1, max_size=6))
def test_diversity_oracle_and_fresh_topic(topics):
    td = topic_diversity(topics, 3)
    assert 0 < td <= 1
    assert td == oracles.diversity(topics, 3)
    fresh = topics + [["new1", "new2", "new3"]]
    assert topic_diversity(fresh, 3) >= td


def test_chi_fixtures():
    assert calinski_harabasz(FOUR, FOUR_LABELS) == pytest.approx(20000.0, rel=1e-9)
    assert calinski_harabasz(FOUR, FOUR_LABELS) == pytest.approx(oracles.chi(FOUR.tolist(), FOUR_LABELS), rel=1e-9)
    eight = np.vstack([FOUR, FOUR])
    assert calinski_harabasz(eight, FOUR_LABELS * 2) == pytest.approx(60000.0, rel=1e-9)
    # the (n-k)/(k-1) factor moves from 2 to 6 while the trace ratio is unchanged
    assert calinski_harabasz(eight, FOUR_LABELS * 2) / calinski_harabasz(FOUR, FOUR_LABELS) == pytest.approx(3.0)


def test_chi_degenerate_sentinel():
    assert calinski_harabasz(np.array([[0.0], [1.0]]), [0, 1]) == math.inf
    report = MetricsReport(chi=math.inf)
    assert report.to_json()["chi"] is None


def test_dbi_fixtures():
    assert davies_bouldin(FOUR, FOUR_LABELS) == pytest.approx(0.01, rel=1e-9)
    assert davies_bouldin(FOUR, FOUR_LABELS) == pytest.approx(oracles.dbi(FOUR.tolist(), FOUR_LABELS), rel=1e-9)
    assert davies_bouldin(np.array([[0.0], [1.0]]), [0, 1]) == 0.0
    with pytest.raises(ValueError, match="coincident"):
        davies_bouldin(np.array([[-1.0], [1.0], [0.0], [0.0]]), [0, 0, 1, 1])


def test_geometry_random_vs_oracle_and_translation():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 3))
    labels = rng.integers(0, 4, size=30).tolist()
    assert calinski_harabasz(x, labels) == pytest.approx(oracles.chi(x.tolist(), labels), rel=1e-9)
    assert davies_bouldin(x, labels) == pytest.approx(oracles.dbi(x.tolist(), labels), rel=1e-9)
    shifted = x + np.array([5.0, -3.0, 2.0])
    assert calinski_harabasz(shifted, labels) == pytest.approx(calinski_harabasz(x, labels), rel=1e-9)
    assert davies_bouldin(shifted, labels) == pytest.approx(davies_bouldin(x, labels), rel=1e-9)


def test_labeled_metrics_six_items():
    pred, gold = [1, 1, 2, 2, 3, 3], [1, 1, 1, 2, 2, 2]
    acc, nmi, ari = labeled_metrics(pred, gold)
    assert acc == 4 / 6 == oracles.accuracy_brute_force(pred, gold)
    assert ari == pytest.approx(0.8 / 3.3, rel=1e-12)
    assert ari == pytest.approx(oracles.ari_pair_counting(pred, gold), rel=1e-12)
    assert nmi == pytest.approx(oracles.nmi(pred, gold), rel=1e-12)
    assert nmi == pytest.approx(0.5295405780575617, rel=1e-12)


def test_single_cluster_against_balanced_gold():
    assert labeled_metrics([0, 0, 0, 0], ["x", "x", "y", "y"]) == (0.5, 0.0, 0.0)


def test_permutation_gives_perfect_scores():
    gold = [0, 0, 1, 1, 2, 2, 2]
    relabel = {0: "c", 1: "a", 2: "b"}
    acc, nmi, ari = labeled_metrics([relabel[g] for g in gold], gold)
    assert acc == 1.0 and ari == 1.0
    assert nmi == pytest.approx(1.0, abs=1e-12)


def test_length_mismatch():
    with pytest.raises(ValueError):
        labeled_metrics([0, 1], [0])


@settings(max_examples=80, deadline=None)
@given(data=st.data())
def test_labeled_metrics_properties(data):
    n = data.draw(st.integers(2, 12))
    pred = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    gold = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    acc, nmi, ari = labeled_metrics(pred, gold)
    assert 0 <= acc <= 1 and 0 <= nmi <= 1 and -1 <= ari <= 1
    assert acc == pytest.approx(oracles.accuracy_brute_force(pred, gold), abs=1e-15)
    assert ari == pytest.approx(oracles.ari_pair_counting(pred, gold), abs=1e-12)
    assert nmi == pytest.approx(normalized_mutual_info(gold, pred), abs=1e-12)
    assert nmi == pytest.approx(min(1.0, max(0.0, oracles.nmi(pred, gold))), abs=1e-12)
    perm = data.draw(st.permutations(range(4)))
    assert clustering_accuracy([perm[p] for p in pred], gold) == acc
    assert adjusted_rand_index([perm[p] for p in pred], gold) == pytest.approx(ari, abs=1e-12)


def test_geometry_returns_builtin_floats():
    assert type(davies_bouldin(FOUR, FOUR_LABELS)) is float
    assert type(calinski_harabasz(FOUR, FOUR_LABELS)) is float
