"""Document loading, validation and term statistics."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus input."""


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    abstract: str = ""
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("document id must be a non-empty string")
        if not isinstance(self.title, str) or not self.title.strip():
            raise CorpusError(f"document {self.id!r} has an empty title")

    @property
    def year(self) -> int | None:
        value = self.metadata.get("year")
        if value is None or isinstance(value, bool):
            return None
        try:
            return int(str(value).strip())
        except ValueError:
            return None


ENGLISH_STOPWORDS = frozenset("""
a about above after again against all am an and any are as at be because been before
being below between both but by can could did do does doing down during each few for
from further had has have having he her here hers herself him himself his how i if in
into is it its itself just me more most my myself no nor not now of off on once only
or other our ours ourselves out over own same she should so some such than that the
their theirs them themselves then there these they this those through to too under
until up very was we were what when where which while who whom why will with would
you your yours yourself yourselves using based via also new paper propose
proposed show results approach method methods
""".split())


@dataclass(frozen=True)
class TokenizeConfig:
    stopwords: frozenset[str] = frozenset()
    min_df: int = 2

    def __post_init__(self) -> None:
        if self.min_df < 1:
            raise ValueError(f"min_df must be >= 1, got {self.min_df}")


@dataclass(frozen=True, eq=False)
class Corpus:
    documents: tuple[Document, ...]
    vocabulary: Mapping[str, int] = field(default_factory=dict)
    # rows = documents, columns = vocabulary indices
    term_doc_matrix: sparse.csr_matrix | None = None

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.documents]

    @property
    def is_tokenized(self) -> bool:
        return self.term_doc_matrix is not None

    def index_of(self, doc_id: str) -> int:
        try:
            return self._index[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id {doc_id!r}") from None

    def get(self, doc_id: str) -> Document:
        return self.documents[self.index_of(doc_id)]

    @property
    def terms(self) -> list[str]:
        out = [""] * len(self.vocabulary)
        for term, idx in self.vocabulary.items():
            out[idx] = term
        return out

    @property
    def _index(self) -> dict[str, int]:
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {d.id: i for i, d in enumerate(self.documents)}
            object.__setattr__(self, "_index_cache", cached)
        return cached


def make_corpus(documents: Iterable[Document]) -> Corpus:
    docs = tuple(documents)
    if not docs:
        raise CorpusError("corpus is empty")
    seen: dict[str, int] = {}
    for i, doc in enumerate(docs):
        if doc.id in seen:
            raise CorpusError(
                f"duplicate id {doc.id!r} at documents {seen[doc.id]} and {i}"
            )
        seen[doc.id] = i
    return Corpus(documents=docs)


def _record_to_document(record: Any, where: str) -> Document:
    if not isinstance(record, dict):
        raise CorpusError(f"{where}: expected a JSON object")
    if "id" not in record:
        raise CorpusError(f"{where}: missing 'id'")
    if "title" not in record:
        raise CorpusError(f"{where}: missing 'title'")
    doc_id = record["id"]
    if isinstance(doc_id, int) and not isinstance(doc_id, bool):
        doc_id = str(doc_id)
    abstract = record.get("abstract") or ""
    metadata = record.get("metadata") or {}
    if not isinstance(abstract, str):
        raise CorpusError(f"{where}: 'abstract' must be a string")
    if not isinstance(metadata, dict):
        raise CorpusError(f"{where}: 'metadata' must be an object")
    try:
        return Document(id=doc_id, title=record["title"], abstract=abstract, metadata=dict(metadata))
    except CorpusError as exc:
        raise CorpusError(f"{where}: {exc}") from None


def load_corpus(path: str | Path, format: str = "jsonl") -> Corpus:
    """Read a JSON-lines corpus; documents keep file order.

    Blank lines are skipped. Errors name the 1-based line number.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    path = Path(path)
    docs: list[Document] = []
    first_line: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:line {lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{where}: invalid JSON ({exc.msg})") from None
            doc = _record_to_document(record, where)
            if doc.id in first_line:
                raise CorpusError(
                    f"duplicate id {doc.id!r} on line {first_line[doc.id]} and line {lineno}"
                )
            first_line[doc.id] = lineno
            docs.append(doc)
    if not docs:
        raise CorpusError(f"{path}: corpus is empty")
    return Corpus(documents=tuple(docs))


def write_corpus(documents: Iterable[Document], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in documents:
            record = {"id": doc.id, "title": doc.title, "abstract": doc.abstract,
                      "metadata": dict(doc.metadata)}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def tokenize_text(text: str, stopwords: Iterable[str] = ()) -> list[str]:
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    tokens = _PUNCT.sub(" ", text.lower()).split()
    return [t for t in tokens if t not in stop]


def document_tokens(doc: Document, stopwords: Iterable[str] = ()) -> list[str]:
    # metadata is deliberately excluded from term statistics
    return tokenize_text(f"{doc.title} {doc.abstract}", stopwords)


def tokenize(corpus: Corpus, config: TokenizeConfig | None = None) -> Corpus:
    config = config or TokenizeConfig()
    counts = [Counter(document_tokens(d, config.stopwords)) for d in corpus.documents]
    df: Counter[str] = Counter()
    for c in counts:
        df.update(c.keys())
    kept = sorted(t for t, n in df.items() if n >= config.min_df)
    vocab = {t: i for i, t in enumerate(kept)}
    rows, cols, vals = [], [], []
    for r, c in enumerate(counts):
        for term, n in c.items():
            j = vocab.get(term)
            if j is not None:
                rows.append(r)
                cols.append(j)
                vals.append(n)
    matrix = sparse.csr_matrix(
        (np.asarray(vals, dtype=np.int64), (rows, cols)),
        shape=(len(corpus), len(vocab)),
    )
    matrix.sort_indices()
    return replace(corpus, vocabulary=vocab, term_doc_matrix=matrix)


def doc_term_sets(corpus: Corpus) -> list[set[str]]:
    """Distinct vocabulary terms per document."""
    if corpus.term_doc_matrix is None:
        raise CorpusError("corpus is not tokenized")
    terms = corpus.terms
    m = corpus.term_doc_matrix
    return [{terms[j] for j in m.indices[m.indptr[i]:m.indptr[i + 1]]} for i in range(m.shape[0])]


def load_labels(path: str | Path) -> dict[str, str]:
    """Read a two-column ``id,label`` CSV; a leading header row is skipped."""
    import csv

    labels: dict[str, str] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise CorpusError(f"{path}:line {lineno}: expected 2 columns, got {len(row)}")
            key, label = row[0].strip(), row[1].strip()
            if lineno == 1 and key.lower() == "id" and label.lower() == "label":
                continue
            labels[key] = label
    return labels


def labels_for(corpus: Corpus, labels: Mapping[str, str]) -> list[str]:
    missing = [d.id for d in corpus.documents if d.id not in labels]
    if missing:
        raise CorpusError(f"{len(missing)} documents lack gold labels, e.g. {missing[0]!r}")
    return [labels[d.id] for d in corpus.documents]

