"""Per-field text embeddings and the composite document representation.

Two backends are provided: an OpenAI-compatible HTTP client and an offline
hash-projection embedder that needs neither network nor model weights.
Both sit behind a content-addressed on-disk cache so that a corpus embeds to
the same matrix on every run.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .corpus import Corpus, Document, tokenize_text

log = logging.getLogger(__name__)


class EmbeddingError(RuntimeError):
    pass


class DimensionMismatch(EmbeddingError, ValueError):
    pass


class EmptyFieldPolicy(str, enum.Enum):
    EMBED_EMPTY = "embed_empty"
    ZERO = "zero"


@dataclass(frozen=True)
class CompositeEmbedding:
    values: np.ndarray
    source_doc: str

    @property
    def dim(self) -> int:
        return self.values.shape[0] // 3

    def field(self, i: int) -> np.ndarray:
        d = self.dim
        return self.values[i * d:(i + 1) * d]


class EmbeddingCache:
    """Content-addressed vector store: one raw float64 file per (backend, text)."""

    def __init__(self, root: str | Path):
        self.root = Path(root) / "embeddings"
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(backend_id: str, text: str) -> str:
        return hashlib.sha256(f"{backend_id}\x00{text}".encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.f64"

    def get(self, backend_id: str, text: str) -> np.ndarray | None:
        path = self._path(self.key(backend_id, text))
        if not path.exists():
            return None
        return np.frombuffer(path.read_bytes(), dtype="<f8").copy()

    def put(self, backend_id: str, text: str, vector: np.ndarray) -> None:
        path = self._path(self.key(backend_id, text))
        path.parent.mkdir(exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(np.asarray(vector, dtype="<f8").tobytes())
        os.replace(tmp, path)


class EmbeddingBackend:
    """Base class: subclasses implement ``_compute`` for a batch of texts."""

    kind: str = "abstract"

    def __init__(self, dim: int, cache: EmbeddingCache | None = None):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.cache = cache
        self._memory: dict[str, np.ndarray] = {}
        self.computed = 0

    @property
    def backend_id(self) -> str:
        raise NotImplementedError

    def _compute(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def _check(self, vectors: np.ndarray, n: int) -> np.ndarray:
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != n or vectors.shape[1] != self.dim:
            raise DimensionMismatch(
                f"{self.backend_id}: expected {n}x{self.dim} vectors, got shape {vectors.shape}"
            )
        if not np.all(np.isfinite(vectors)):
            raise EmbeddingError(f"{self.backend_id}: backend returned non-finite values")
        return vectors

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim))
        missing: dict[str, list[int]] = {}
        for i, text in enumerate(texts):
            vec = self._memory.get(text)
            if vec is None and self.cache is not None:
                vec = self.cache.get(self.backend_id, text)
                if vec is not None:
                    if vec.shape != (self.dim,):
                        raise DimensionMismatch(
                            f"cached vector for {self.backend_id} has length {vec.shape[0]}, expected {self.dim}"
                        )
                    self._memory[text] = vec
            if vec is None:
                missing.setdefault(text, []).append(i)
            else:
                out[i] = vec
        if missing:
            unique = list(missing)
            fresh = self._check(self._compute(unique), len(unique))
            self.computed += len(unique)
            for text, vec in zip(unique, fresh):
                vec = vec.copy()
                self._memory[text] = vec
                if self.cache is not None:
                    self.cache.put(self.backend_id, text, vec)
                out[missing[text]] = vec
        return out


class OfflineHashEmbedder(EmbeddingBackend):
    """Deterministic bag-of-tokens embedder.

    Every token maps to a Gaussian vector drawn from a generator seeded by a
    hash of (seed, token); a text is the unit-normalised sum of its token
    vectors. Texts without tokens map to a fixed sentinel vector.
    """

    kind = "offline_deterministic"

    def __init__(self, dim: int = 64, seed: int = 0, cache: EmbeddingCache | None = None):
        super().__init__(dim, cache)
        self.seed = seed
        self._token_vector = lru_cache(maxsize=None)(self._token_vector_uncached)

    @property
    def backend_id(self) -> str:
        return f"offline-hash:v1:seed={self.seed}:dim={self.dim}"

    def _token_vector_uncached(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(f"{self.seed}\x00{token}".encode("utf-8"), digest_size=16).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dim)

    def embed_one(self, text: str) -> np.ndarray:
        tokens = tokenize_text(text)
        if not tokens:
            vec = self._token_vector("\x00<empty>")
        else:
            vec = np.zeros(self.dim)
            for tok in tokens:
                vec += self._token_vector(tok)
        return vec / np.linalg.norm(vec)

    def _compute(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed_one(t) for t in texts]) if texts else np.empty((0, self.dim))


class RemoteEmbedder(EmbeddingBackend):
    """Client for an OpenAI-compatible ``/embeddings`` endpoint."""

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str,
        dim: int,
        cache: EmbeddingCache | None = None,
        api_key_env: str = "SCITOPIC_API_KEY",
        batch_size: int = 32,
        max_in_flight: int = 4,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        super().__init__(dim, cache)
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.retries = retries
        self.backoff = backoff
        token = os.environ.get(api_key_env) or os.environ.get("OPENAI_API_KEY")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.client = client or httpx.Client(timeout=timeout)
        self.headers = headers
        self.requests = 0

    @property
    def backend_id(self) -> str:
        return f"remote:{self.endpoint}:{self.model}:dim={self.dim}"

    @property
    def url(self) -> str:
        return self.endpoint if self.endpoint.endswith("/embeddings") else f"{self.endpoint}/embeddings"

    def _post(self, batch: Sequence[str]) -> np.ndarray:
        payload = {"model": self.model, "input": list(batch)}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                self.requests += 1
                resp = self.client.post(self.url, json=payload, headers=self.headers)
                resp.raise_for_status()
                data = resp.json()["data"]
                if len(data) != len(batch):
                    raise DimensionMismatch(f"sent {len(batch)} inputs, received {len(data)} embeddings")
                data = sorted(data, key=lambda item: item.get("index", 0)) if all(
                    "index" in item for item in data) else data
                return np.asarray([item["embedding"] for item in data], dtype=np.float64)
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                if isinstance(exc, DimensionMismatch):
                    raise
                last = exc
                log.warning("embedding request failed (attempt %d/%d): %s", attempt + 1, self.retries + 1, exc)
                if attempt < self.retries and self.backoff > 0:
                    time.sleep(min(self.backoff * 2.0 ** attempt, 8.0))
        raise EmbeddingError(f"embedding request failed after {self.retries + 1} attempts: {last}")

    def _compute(self, texts: Sequence[str]) -> np.ndarray:
        batches = [texts[i:i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        if len(batches) <= 1 or self.max_in_flight <= 1:
            parts = [self._check(self._post(b), len(b)) for b in batches]
        else:
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                parts = [self._check(p, len(b)) for p, b in zip(pool.map(self._post, batches), batches)]
        return np.concatenate(parts) if parts else np.empty((0, self.dim))


def embed_text(backend: EmbeddingBackend, text: str) -> np.ndarray:
    return backend.embed_many([text])[0]


def compose(h_t: np.ndarray, h_a: np.ndarray, h_m: np.ndarray) -> np.ndarray:
    """Concatenate title, abstract and metadata vectors in that order."""
    h_t, h_a, h_m = (np.asarray(h, dtype=np.float64) for h in (h_t, h_a, h_m))
    if not (h_t.ndim == h_a.ndim == h_m.ndim == 1) or not (h_t.shape == h_a.shape == h_m.shape):
        raise DimensionMismatch(
            f"field embeddings must share one dimension, got {h_t.shape}, {h_a.shape}, {h_m.shape}"
        )
    return np.concatenate([h_t, h_a, h_m])


_LEADING_KEYS = ("authors", "year", "venue")


def _format_value(value: object) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    return str(value)


def metadata_string(metadata: dict | None) -> str:
    """Canonical one-line rendering: authors, year, venue, then other keys sorted."""
    if not metadata:
        return ""
    keys = [k for k in _LEADING_KEYS if k in metadata]
    keys += sorted(k for k in metadata if k not in _LEADING_KEYS)
    return "; ".join(f"{k}: {_format_value(metadata[k])}" for k in keys)


def _field_texts(doc: Document) -> tuple[str, str, str]:
    return doc.title, doc.abstract, metadata_string(dict(doc.metadata))


def embed_document(
    backend: EmbeddingBackend,
    doc: Document,
    policy: EmptyFieldPolicy = EmptyFieldPolicy.EMBED_EMPTY,
) -> CompositeEmbedding:
    return CompositeEmbedding(embed_corpus(backend, [doc], policy)[0], doc.id)


def embed_corpus(
    backend: EmbeddingBackend,
    documents: Corpus | Sequence[Document],
    policy: EmptyFieldPolicy = EmptyFieldPolicy.EMBED_EMPTY,
) -> np.ndarray:
    """Embed every document; returns an ``n x 3*dim`` matrix in document order."""
    docs = documents.documents if isinstance(documents, Corpus) else list(documents)
    policy = EmptyFieldPolicy(policy)
    fields = list(zip(*(_field_texts(d) for d in docs))) if docs else [(), (), ()]
    blocks = []
    for texts in fields:
        block = backend.embed_many(list(texts))
        if policy is EmptyFieldPolicy.ZERO:
            empty = np.array([not t.strip() for t in texts], dtype=bool)
            block[empty] = 0.0
        blocks.append(block)
    return np.hstack(blocks)
