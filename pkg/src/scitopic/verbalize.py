"""Class-based TF-IDF topic terms and per-year topic counts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .corpus import Corpus

UNKNOWN_YEAR = "unknown"


@dataclass(frozen=True, eq=False)
class CTfIdfStats:
    tf: np.ndarray  # terms x clusters
    T: np.ndarray  # total term count per cluster
    B: float  # mean of T over non-empty clusters
    cf: np.ndarray  # number of clusters containing each term
    terms: tuple[str, ...]

    @property
    def K(self) -> int:
        return self.tf.shape[1]


@dataclass
class TopicSummary:
    cluster_id: int
    terms: list[tuple[str, float]]
    size: int
    year_counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "size": self.size,
            "terms": [[t, w] for t, w in self.terms],
            "year_counts": self.year_counts,
        }


def ctfidf(corpus: Corpus, assignments: Sequence[int], K: int | None = None) -> CTfIdfStats:
    """Pool term counts per cluster, treating each cluster as one document."""
    if corpus.term_doc_matrix is None:
        raise ValueError("corpus must be tokenized first")
    labels = np.asarray(assignments, dtype=np.int64)
    if labels.shape != (len(corpus),):
        raise ValueError(f"expected {len(corpus)} assignments, got {labels.shape}")
    K = int(labels.max()) + 1 if K is None else K
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"assignment index outside [0, {K})")
    member = sparse.csr_matrix(
        (np.ones(len(labels)), (labels, np.arange(len(labels)))), shape=(K, len(labels))
    )
    tf = np.asarray((member @ corpus.term_doc_matrix).todense(), dtype=np.float64).T
    T = tf.sum(axis=0)
    nonempty = T > 0
    B = float(T[nonempty].mean()) if nonempty.any() else 0.0
    cf = (tf > 0).sum(axis=1)
    return CTfIdfStats(tf=tf, T=T, B=B, cf=cf, terms=tuple(corpus.terms))


def term_weights(stats: CTfIdfStats, cluster: int) -> np.ndarray:
    if not 0 <= cluster < stats.K:
        raise IndexError(f"unknown cluster {cluster}")
    tf = stats.tf[:, cluster]
    total = stats.T[cluster]
    if total == 0:
        return np.zeros_like(tf)
    weights = np.zeros_like(tf)
    present = tf > 0
    weights[present] = (tf[present] / total) * np.log1p(stats.B / stats.cf[present])
    return weights


def topic_terms(stats: CTfIdfStats, cluster: int, top_k: int = 10) -> list[tuple[str, float]]:
    """Top terms by weight, ties broken alphabetically; zero-weight terms never listed."""
    weights = term_weights(stats, cluster)
    ranked = sorted(
        ((stats.terms[i], float(weights[i])) for i in np.flatnonzero(weights > 0)),
        key=lambda tw: (-tw[1], tw[0]),
    )
    return ranked[:top_k]


def _year_key(year: int | None) -> str:
    return UNKNOWN_YEAR if year is None else str(year)


def topic_trends(assignments: Sequence[int], corpus: Corpus, K: int | None = None) -> dict[int, dict[str, int]]:
    """Documents per (cluster, year); missing or unparseable years count as ``unknown``."""
    labels = [int(a) for a in assignments]
    K = max(labels) + 1 if K is None else K
    out: dict[int, dict[str, int]] = {c: {} for c in range(K)}
    for label, doc in zip(labels, corpus.documents):
        key = _year_key(doc.year)
        out[label][key] = out[label].get(key, 0) + 1
    return {c: dict(sorted(counts.items())) for c, counts in out.items()}


def summarize(corpus: Corpus, assignments: Sequence[int], K: int, top_k: int = 10) -> list[TopicSummary]:
    stats = ctfidf(corpus, assignments, K)
    trends = topic_trends(assignments, corpus, K)
    sizes = np.bincount(np.asarray(assignments, dtype=np.int64), minlength=K)
    return [
        TopicSummary(c, topic_terms(stats, c, top_k), int(sizes[c]), trends[c])
        for c in range(K)
    ]


def write_topics_json(topics: Sequence[TopicSummary], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([t.to_json() for t in topics], indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def read_topics_json(path: str | Path) -> list[TopicSummary]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        TopicSummary(
            cluster_id=int(t["cluster_id"]),
            terms=[(str(term), float(w)) for term, w in t["terms"]],
            size=int(t.get("size", 0)),
            year_counts={str(k): int(v) for k, v in t.get("year_counts", {}).items()},
        )
        for t in raw
    ]


def write_wordclouds(topics: Sequence[TopicSummary], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t in topics:
        with (directory / f"cluster_{t.cluster_id}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["term", "weight"])
            for term, weight in t.terms:
                w.writerow([term, repr(weight)])

