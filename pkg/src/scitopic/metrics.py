"""Topic-quality and clustering metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

EPSILON = 1e-12


@dataclass
class CooccurrenceStats:
    doc_freq: dict[str, int]
    pair_freq: dict[frozenset[str], int]
    n_docs: int
    epsilon: float = EPSILON

    @classmethod
    def from_documents(
        cls,
        doc_terms: Sequence[set[str]],
        words: Iterable[str] | None = None,
        epsilon: float = EPSILON,
    ) -> "CooccurrenceStats":
        """Document-level counts, restricted to ``words`` when given."""
        keep = set(words) if words is not None else None
        doc_freq: dict[str, int] = {}
        pair_freq: dict[frozenset[str], int] = {}
        for terms in doc_terms:
            present = sorted(terms if keep is None else terms & keep)
            for w in present:
                doc_freq[w] = doc_freq.get(w, 0) + 1
            for a, b in itertools.combinations(present, 2):
                key = frozenset((a, b))
                pair_freq[key] = pair_freq.get(key, 0) + 1
        return cls(doc_freq, pair_freq, len(doc_terms), epsilon)

    def p(self, w: str) -> float:
        return self.doc_freq.get(w, 0) / self.n_docs + self.epsilon

    def joint(self, a: str, b: str) -> float:
        return self.pair_freq.get(frozenset((a, b)), 0) / self.n_docs + self.epsilon

    def npmi(self, a: str, b: str) -> float:
        pab = self.joint(a, b)
        if pab >= 1.0:
            # both words in every document: the 0/0 limit is taken as perfect association
            return 1.0
        pmi = math.log(pab / (self.p(a) * self.p(b)))
        return pmi / -math.log(pab)


@dataclass
class MetricsReport:
    tc: float | None = None
    td: float | None = None
    chi: float | None = None
    dbi: float | None = None
    acc: float | None = None
    nmi: float | None = None
    ari: float | None = None
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = asdict(self)
        if out["chi"] is not None and math.isinf(out["chi"]):
            out["chi"] = None
        return out


def topic_coherence_scores(
    topics: Sequence[Sequence[str]],
    stats: CooccurrenceStats,
    mode: str = "paper",
    flags: list[str] | None = None,
) -> list[float]:
    """Per-topic coherence.

    ``paper`` sums ``NPMI * log P(wi, wj)`` over pairs and divides by the
    number of words; ``npmi-mean`` is the plain mean pairwise NPMI.
    """
    if mode not in ("paper", "npmi-mean"):
        raise ValueError(f"unknown coherence mode {mode!r}")
    scores = []
    for words in topics:
        if flags is not None:
            for w in words:
                if stats.doc_freq.get(w, 0) == 0:
                    flags.append(f"coherence: word {w!r} absent from reference corpus")
        pairs = list(itertools.combinations(words, 2))
        if not pairs:
            scores.append(0.0)
            continue
        if mode == "paper":
            total = sum(stats.npmi(a, b) * math.log(stats.joint(a, b)) for a, b in pairs)
            scores.append(total / len(words))
        else:
            scores.append(sum(stats.npmi(a, b) for a, b in pairs) / len(pairs))
    return scores


def topic_coherence(
    topics: Sequence[Sequence[str]],
    stats: CooccurrenceStats,
    mode: str = "paper",
    flags: list[str] | None = None,
) -> float:
    scores = topic_coherence_scores(topics, stats, mode, flags)
    return float(np.mean(scores)) if scores else 0.0


def topic_diversity(topics: Sequence[Sequence[str]], k: int, flags: list[str] | None = None) -> float:
    """Unique words over all topics' top-k lists, divided by the list slots."""
    if not topics:
        raise ValueError("need at least one topic")
    unique: set[str] = set()
    slots = 0
    for i, words in enumerate(topics):
        top = list(words)[:k]
        if len(top) < k and flags is not None:
            flags.append(f"diversity: topic {i} has {len(top)} < {k} words")
        unique.update(top)
        slots += len(top)
    if slots == 0:
        raise ValueError("all topics are empty")
    return len(unique) / slots


def _clusters(embeddings: np.ndarray, assignments: Sequence[int]):
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(assignments)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ValueError("one assignment per embedding row required")
    uniq, inv = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise ValueError("need at least 2 non-empty clusters")
    return x, inv, uniq.size


def calinski_harabasz(embeddings: np.ndarray, assignments: Sequence[int]) -> float:
    """Between/within dispersion ratio; ``inf`` when every cluster is a single point."""
    x, inv, k = _clusters(embeddings, assignments)
    n = x.shape[0]
    if n <= k:
        # Only degenerate (all singletons) reaches here; within-scatter is zero.
        return math.inf
    grand = x.mean(axis=0)
    between = within = 0.0
    for c in range(k):
        pts = x[inv == c]
        mu = pts.mean(axis=0)
        between += pts.shape[0] * float(((mu - grand) ** 2).sum())
        within += float(((pts - mu) ** 2).sum())
    if within == 0.0:
        return math.inf
    return between / within * (n - k) / (k - 1)


def davies_bouldin(embeddings: np.ndarray, assignments: Sequence[int]) -> float:
    x, inv, k = _clusters(embeddings, assignments)
    centroids = np.stack([x[inv == c].mean(axis=0) for c in range(k)])
    spread = np.array([np.linalg.norm(x[inv == c] - centroids[c], axis=1).mean() for c in range(k)])
    total = 0.0
    for i in range(k):
        worst = -math.inf
        for j in range(k):
            if j == i:
                continue
            d = float(np.linalg.norm(centroids[i] - centroids[j]))
            if d == 0.0:
                raise ValueError(f"clusters {i} and {j} have coincident centroids")
            worst = max(worst, (spread[i] + spread[j]) / d)
        total += worst
    return float(total / k)


def contingency(pred: Sequence, gold: Sequence) -> np.ndarray:
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(gold)} labels")
    _, p = np.unique(np.asarray(pred), return_inverse=True)
    _, g = np.unique(np.asarray(gold), return_inverse=True)
    table = np.zeros((p.max() + 1, g.max() + 1), dtype=np.int64)
    np.add.at(table, (p, g), 1)
    return table


def clustering_accuracy(pred: Sequence, gold: Sequence) -> float:
    table = contingency(pred, gold)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def normalized_mutual_info(pred: Sequence, gold: Sequence) -> float:
    """Mutual information over the geometric mean of the two entropies."""
    table = contingency(pred, gold).astype(np.float64)
    n = table.sum()
    hp, hg = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if hp == 0.0 and hg == 0.0:
        return 1.0
    if hp == 0.0 or hg == 0.0:
        return 0.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n**2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return min(1.0, max(0.0, mi / math.sqrt(hp * hg)))


def adjusted_rand_index(pred: Sequence, gold: Sequence) -> float:
    table = contingency(pred, gold)
    n = int(table.sum())

    def comb2(v):
        v = np.asarray(v, dtype=np.float64)
        return v * (v - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = n * (n - 1) / 2.0
    expected = sum_rows * sum_cols / total if total else 0.0
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def labeled_metrics(pred: Sequence, gold: Sequence) -> tuple[float, float, float]:
    return clustering_accuracy(pred, gold), normalized_mutual_info(pred, gold), adjusted_rand_index(pred, gold)
