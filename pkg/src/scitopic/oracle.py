"""Triplet judging: prompt rendering, verdict parsing, remote and mock judges."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import httpx
import numpy as np

from .corpus import Corpus
from .sampler import Triplet

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "triplet-v1"

_TEMPLATE = """\
You are sorting scientific articles into research areas.
Does the anchor article belong to the same research area as candidate 1 or candidate 2?
Reply with exactly one token: 1, 2, or Neither.

Anchor
{anchor}

Candidate 1
{cand1}

Candidate 2
{cand2}

Answer (1, 2, or Neither):"""


class Verdict(str, enum.Enum):
    CAND1 = "cand1"
    CAND2 = "cand2"
    NEITHER = "neither"


class JudgeTransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class TripletPrompt:
    text: str
    triplet_id: str
    triplet: Triplet


@dataclass(frozen=True)
class TripletJudgment:
    triplet: Triplet
    verdict: Verdict
    raw_response: str
    parse_failure: bool = False

    @property
    def anchor(self) -> str:
        return self.triplet.anchor

    @property
    def positive(self) -> str | None:
        if self.verdict is Verdict.CAND1:
            return self.triplet.cand1
        if self.verdict is Verdict.CAND2:
            return self.triplet.cand2
        return None

    @property
    def negative(self) -> str | None:
        if self.verdict is Verdict.CAND1:
            return self.triplet.cand2
        if self.verdict is Verdict.CAND2:
            return self.triplet.cand1
        return None

    @property
    def usable(self) -> bool:
        return self.verdict is not Verdict.NEITHER


def _paper_block(title: str, abstract: str, budget: int) -> str:
    lines = [f"Title: {title.strip()}"]
    snippet = abstract.strip()[:budget] if budget > 0 else ""
    if snippet:
        lines.append(f"Abstract: {snippet}")
    return "\n".join(lines)


def render_prompt(triplet: Triplet, corpus: Corpus, budget: int = 600) -> TripletPrompt:
    """Render the judge prompt; abstracts are cut to ``budget`` characters."""
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    docs = [corpus.get(doc_id) for doc_id in (triplet.anchor, triplet.cand1, triplet.cand2)]
    a, c1, c2 = (_paper_block(d.title, d.abstract, budget) for d in docs)
    return TripletPrompt(_TEMPLATE.format(anchor=a, cand1=c1, cand2=c2), triplet.triplet_id, triplet)


_VERDICT_RE = re.compile(r"^[\s\"'`*_(\[]*(1|2|neither)(?![\w])", re.IGNORECASE)


def parse_verdict(response: str) -> Verdict | None:
    """Leading ``1``, ``2`` or ``neither`` token, case-insensitive; None if absent."""
    m = _VERDICT_RE.match(response or "")
    if m is None:
        return None
    token = m.group(1).lower()
    return {"1": Verdict.CAND1, "2": Verdict.CAND2}.get(token, Verdict.NEITHER)


class JudgeBackend:
    name = "abstract"
    uses_disk_cache = False

    def complete(self, prompt: TripletPrompt) -> str:
        raise NotImplementedError


class RemoteJudge(JudgeBackend):
    """OpenAI-compatible chat-completions client, temperature 0."""

    uses_disk_cache = True

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "SCITOPIC_API_KEY",
        max_tokens: int = 8,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.max_tokens = max_tokens
        self.retries = retries
        self.backoff = backoff
        token = os.environ.get(api_key_env) or os.environ.get("OPENAI_API_KEY")
        self.headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.client = client or httpx.Client(timeout=timeout)
        self.requests = 0
        self._lock = threading.Lock()

    @property
    def name(self) -> str:  # type: ignore[override]
        return f"remote:{self.endpoint}:{self.model}"

    @property
    def url(self) -> str:
        if self.endpoint.endswith("/chat/completions"):
            return self.endpoint
        return f"{self.endpoint}/chat/completions"

    def complete(self, prompt: TripletPrompt) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": 0,
            "max_tokens": self.max_tokens,
        }
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._lock:
                    self.requests += 1
                resp = self.client.post(self.url, json=payload, headers=self.headers)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                log.warning("judge request failed (attempt %d/%d): %s", attempt + 1, self.retries + 1, exc)
                if attempt < self.retries and self.backoff > 0:
                    time.sleep(min(self.backoff * 2.0 ** attempt, 8.0))
        raise JudgeTransportError(f"judge request failed after {self.retries + 1} attempts: {last}")


class MockJudge(JudgeBackend):
    """Deterministic stand-in answering from gold labels or base embeddings.

    Modes: ``label_oracle``, ``cosine_oracle`` and ``noisy`` (label oracle
    whose 1/2 answers are swapped with probability ``p``).
    """

    MODES = ("label_oracle", "cosine_oracle", "noisy")

    def __init__(
        self,
        mode: str = "label_oracle",
        labels: Mapping[str, str] | None = None,
        embeddings: np.ndarray | None = None,
        ids: Sequence[str] | None = None,
        p: float = 0.0,
        seed: int = 0,
    ):
        if mode not in self.MODES:
            raise ValueError(f"unknown mock judge mode {mode!r}")
        if mode in ("label_oracle", "noisy") and labels is None:
            raise ValueError(f"mock judge mode {mode!r} needs gold labels")
        if mode == "cosine_oracle" and (embeddings is None or ids is None):
            raise ValueError("cosine_oracle needs base embeddings and their document ids")
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"noise probability must lie in [0, 1], got {p}")
        self.mode = mode
        self.labels = labels
        self.embeddings = embeddings
        self.index = {d: i for i, d in enumerate(ids)} if ids is not None else None
        self.p = p
        self.seed = seed
        self.calls = 0

    @property
    def name(self) -> str:  # type: ignore[override]
        return f"mock:{self.mode}:p={self.p}"

    def _label_answer(self, t: Triplet) -> str:
        assert self.labels is not None
        a = self.labels[t.anchor]
        hit1, hit2 = self.labels[t.cand1] == a, self.labels[t.cand2] == a
        if hit1 and not hit2:
            return "1"
        if hit2 and not hit1:
            return "2"
        return "Neither"

    def _cosine_answer(self, t: Triplet) -> str:
        assert self.embeddings is not None and self.index is not None
        a, c1, c2 = (self.embeddings[self.index[d]] for d in (t.anchor, t.cand1, t.cand2))
        na = np.linalg.norm(a)
        s1 = a @ c1 / (na * np.linalg.norm(c1))
        s2 = a @ c2 / (na * np.linalg.norm(c2))
        if s1 > s2:
            return "1"
        if s2 > s1:
            return "2"
        return "Neither"

    def complete(self, prompt: TripletPrompt) -> str:
        self.calls += 1
        t = prompt.triplet
        if self.mode == "cosine_oracle":
            return self._cosine_answer(t)
        answer = self._label_answer(t)
        if self.mode == "noisy" and answer != "Neither":
            digest = hashlib.blake2b(t.triplet_id.encode(), digest_size=8).digest()
            rng = np.random.default_rng([self.seed, int.from_bytes(digest, "little")])
            if rng.random() < self.p:
                answer = "2" if answer == "1" else "1"
        return answer


class JudgmentCache:
    """Append-only JSONL of judged triplets keyed by (triplet_id, template version)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._entries: dict[tuple[str, str], dict] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[(rec["triplet_id"], rec["template_version"])] = rec

    def get(self, triplet_id: str, version: str = TEMPLATE_VERSION) -> dict | None:
        return self._entries.get((triplet_id, version))

    def put(self, triplet_id: str, verdict: Verdict, raw_response: str, version: str = TEMPLATE_VERSION) -> None:
        rec = {"triplet_id": triplet_id, "template_version": version,
               "verdict": verdict.value, "raw_response": raw_response}
        with self._lock:
            if (triplet_id, version) in self._entries:
                return
            self._entries[(triplet_id, version)] = rec
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


def cache_path_for(cache_dir: str | Path, backend: JudgeBackend) -> Path:
    slug = hashlib.sha256(backend.name.encode()).hexdigest()[:12]
    return Path(cache_dir) / f"judgments-{slug}.jsonl"


def judge(
    prompt: TripletPrompt,
    backend: JudgeBackend,
    cache: JudgmentCache | None = None,
    parse_retries: int = 2,
) -> TripletJudgment:
    """Ask the backend about one triplet.

    Unparseable replies are re-asked up to ``parse_retries`` times and then
    recorded as Neither with ``parse_failure`` set. Transport failures raise
    :class:`JudgeTransportError` and are not cached.
    """
    if cache is not None:
        hit = cache.get(prompt.triplet_id)
        if hit is not None:
            raw = hit["raw_response"]
            return TripletJudgment(prompt.triplet, Verdict(hit["verdict"]), raw, parse_verdict(raw) is None)
    raw = ""
    verdict: Verdict | None = None
    for _ in range(parse_retries + 1):
        raw = backend.complete(prompt)
        verdict = parse_verdict(raw)
        if verdict is not None:
            break
    failed = verdict is None
    if failed:
        log.info("unparseable judge response for %s: %r", prompt.triplet_id, raw)
        verdict = Verdict.NEITHER
    if cache is not None:
        cache.put(prompt.triplet_id, verdict, raw)
    return TripletJudgment(prompt.triplet, verdict, raw, failed)


@dataclass
class JudgeStats:
    judged: int = 0
    neither: int = 0
    parse_failures: int = 0
    failed: int = 0
    reasons: list[str] = field(default_factory=list)


def judge_all(
    triplets: Sequence[Triplet],
    corpus: Corpus,
    backend: JudgeBackend,
    cache: JudgmentCache | None = None,
    budget: int = 600,
    parse_retries: int = 2,
    max_in_flight: int = 8,
) -> tuple[list[TripletJudgment], JudgeStats]:
    """Judge every triplet; output order follows input order.

    Triplets whose transport fails are dropped and counted. Duplicate
    triplets are asked once.
    """
    prompts: dict[str, TripletPrompt] = {}
    for t in triplets:
        prompts.setdefault(t.triplet_id, render_prompt(t, corpus, budget))

    def run(p: TripletPrompt) -> TripletJudgment | str:
        try:
            return judge(p, backend, cache, parse_retries)
        except JudgeTransportError as exc:
            return str(exc)

    unique = list(prompts.values())
    if max_in_flight > 1 and len(unique) > 1 and not isinstance(backend, MockJudge):
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(run, unique))
    else:
        results = [run(p) for p in unique]
    by_id = dict(zip(prompts, results))

    stats = JudgeStats()
    out: list[TripletJudgment] = []
    for t in triplets:
        res = by_id[t.triplet_id]
        if isinstance(res, str):
            stats.failed += 1
            stats.reasons.append(res)
            continue
        stats.judged += 1
        stats.neither += res.verdict is Verdict.NEITHER
        stats.parse_failures += res.parse_failure
        out.append(res)
    return out, stats


def mock_judge(triplet: Triplet, mode: str = "label_oracle", **kwargs) -> TripletJudgment:
    """Judge one triplet with a :class:`MockJudge` built from ``kwargs``."""
    backend = MockJudge(mode, **kwargs)
    prompt = TripletPrompt("", triplet.triplet_id, triplet)
    return judge(prompt, backend)


def usable_judgments(judgments: Sequence[TripletJudgment]) -> list[TripletJudgment]:
    return [j for j in judgments if j.usable]
