"""Synthetic labelled corpora with controllable topic overlap.

Each latent topic owns a vocabulary of pseudo-words; a shared pool supplies
the overlap. Titles and abstracts draw tokens from the topic vocabulary
(Zipf-weighted) or, with probability ``shared_fraction``, from the shared
pool. Metadata (authors, venue, year) is drawn independently of the topic,
so it acts as a nuisance signal in the composite embedding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document, write_corpus

_ONSETS = ["b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl", "gr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "eo", "ia"]
_CODAS = ["", "n", "r", "s", "l", "x", "m", "nt"]


@dataclass(frozen=True)
class SyntheticSpec:
    n_docs: int = 600
    n_topics: int = 3
    topic_vocab: int = 300
    shared_vocab: int = 150
    shared_fraction: float = 0.1
    title_len: int = 4
    abstract_len: int = 10
    n_venues: int = 3
    n_authors: int = 40
    zipf: float = 1.0
    seed: int = 0


def _pseudo_words(n: int, rng: np.random.Generator, taken: set[str]) -> list[str]:
    words: list[str] = []
    while len(words) < n:
        syllables = rng.integers(2, 4)
        w = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        ) + _CODAS[rng.integers(len(_CODAS))]
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def generate(spec: SyntheticSpec = SyntheticSpec()) -> tuple[list[Document], dict[str, str]]:
    """Documents in a fixed order plus their gold topic labels."""
    rng = np.random.default_rng(spec.seed)
    taken: set[str] = set()
    topic_words = [_pseudo_words(spec.topic_vocab, rng, taken) for _ in range(spec.n_topics)]
    shared = _pseudo_words(spec.shared_vocab, rng, taken)
    venues = [f"Venue {v.title()}" for v in _pseudo_words(spec.n_venues, rng, taken)]
    authors = [f"{a.title()} {b.title()}" for a, b in zip(
        _pseudo_words(spec.n_authors, rng, taken), _pseudo_words(spec.n_authors, rng, taken))]

    ranks = np.arange(1, spec.topic_vocab + 1, dtype=np.float64)
    topic_p = ranks ** -spec.zipf
    topic_p /= topic_p.sum()

    def draw(topic: int, length: int) -> str:
        use_shared = rng.random(length) < spec.shared_fraction
        own = rng.choice(spec.topic_vocab, size=length, p=topic_p)
        common = rng.integers(spec.shared_vocab, size=length)
        return " ".join(shared[c] if s else topic_words[topic][o] for s, o, c in zip(use_shared, own, common))

    docs: list[Document] = []
    labels: dict[str, str] = {}
    topics = np.arange(spec.n_docs) % spec.n_topics
    rng.shuffle(topics)
    width = len(str(spec.n_docs - 1))
    for i, topic in enumerate(topics):
        doc_id = f"doc{i:0{width}d}"
        n_auth = int(rng.integers(1, 4))
        meta = {
            "authors": [authors[j] for j in rng.choice(spec.n_authors, size=n_auth, replace=False)],
            "year": int(rng.integers(2015, 2025)),
            "venue": venues[rng.integers(spec.n_venues)],
        }
        title = draw(topic, spec.title_len).capitalize()
        docs.append(Document(doc_id, title, draw(topic, spec.abstract_len) + ".", meta))
        labels[doc_id] = f"topic{topic}"
    return docs, labels


def write_dataset(spec: SyntheticSpec, directory: str | Path) -> tuple[Path, Path]:
    """Write ``corpus.jsonl`` and ``gold.csv`` for ``spec``; returns both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    docs, labels = generate(spec)
    corpus_path, labels_path = directory / "corpus.jsonl", directory / "gold.csv"
    write_corpus(docs, corpus_path)
    with labels_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for d in docs:
            w.writerow([d.id, labels[d.id]])
    return corpus_path, labels_path
