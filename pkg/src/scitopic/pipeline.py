"""End-to-end refinement loop, outputs and parameter sweeps."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import finetune as ft
from .cluster import ClusterState, kmeans, soft_assign
from .corpus import (
    ENGLISH_STOPWORDS,
    Corpus,
    TokenizeConfig,
    doc_term_sets,
    labels_for,
    load_corpus,
    load_labels,
    tokenize,
)
from .embedder import (
    EmbeddingBackend,
    EmbeddingCache,
    EmptyFieldPolicy,
    OfflineHashEmbedder,
    RemoteEmbedder,
    embed_corpus,
)
from .metrics import (
    CooccurrenceStats,
    MetricsReport,
    calinski_harabasz,
    davies_bouldin,
    labeled_metrics,
    topic_coherence,
    topic_diversity,
)
from .oracle import (
    JudgeBackend,
    JudgmentCache,
    MockJudge,
    RemoteJudge,
    TripletJudgment,
    cache_path_for,
    judge_all,
    usable_judgments,
)
from .sampler import SamplerConfig, build_triplets, entropy_records, select_anchors, write_entropy_csv
from .verbalize import TopicSummary, summarize, write_topics_json, write_wordclouds

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    input: str | None = None
    labels: str | None = None
    out_dir: str = "scitopic-out"
    k: int = 100
    alpha: float = 1.0
    lam: float = 0.5
    sigma_low: float = 0.3
    sigma_high: float = 1.0
    n_anchors: int | None = None
    triplets_per_iter: int | None = None
    tau: float = 0.05
    gamma: float = 0.05
    lr: float = 1e-2
    epochs: int = 20
    batch_size: int = 16
    entropy_weighting: bool = True
    margin_mode: str = "uniform"
    iterations: int = 2
    seed: int = 0
    top_k: int = 10
    min_df: int = 2
    stopwords: str = "english"
    empty_field_policy: str = "embed_empty"
    coherence: str = "paper"
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-8
    kmeans_restarts: int = 10
    prompt_budget: int = 600
    parse_retries: int = 2
    max_in_flight: int = 8
    # embedding backend
    mock_embed: bool = False
    embed_dim: int = 64
    embed_seed: int = 0
    embed_endpoint: str | None = None
    embed_model: str = "bge-m3"
    # judge backend
    mock_llm: str | None = None
    noise_p: float = 0.2
    llm_endpoint: str | None = None
    llm_model: str = "llama-3.1-70b-instruct"
    api_key_env: str = "SCITOPIC_API_KEY"
    cache_dir: str | None = None
    dump_entropy: bool = False
    save_adapter: str | None = None
    load_adapter: str | None = None

    def validate(self) -> None:
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        self.sampler_config()
        self.finetune_config(0)
        TokenizeConfig(min_df=self.min_df)
        EmptyFieldPolicy(self.empty_field_policy)
        if self.coherence not in ("paper", "npmi-mean"):
            raise ValueError(f"unknown coherence mode {self.coherence!r}")
        if not self.mock_embed and not self.embed_endpoint:
            raise ValueError("choose --mock-embed or give --embed-endpoint")
        if self.iterations > 0 and not self.mock_llm and not self.llm_endpoint:
            raise ValueError("choose --mock-llm or give --llm-endpoint")
        if self.mock_llm:
            mode, _ = parse_mock_llm(self.mock_llm, self.noise_p)
            if mode in ("label_oracle", "noisy") and not self.labels:
                raise ValueError(f"--mock-llm {mode} needs --labels")
        if self.llm_endpoint and not self.mock_llm and not self.cache_dir:
            raise ValueError("a remote judge requires --cache-dir")

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.lam, self.sigma_low, self.sigma_high, self.n_anchors)

    def finetune_config(self, seed: int) -> ft.FineTuneConfig:
        return ft.FineTuneConfig(
            tau=self.tau, gamma=self.gamma, lr=self.lr, batch_size=self.batch_size,
            epochs=self.epochs, entropy_weighting=self.entropy_weighting, seed=seed,
            margin_mode=self.margin_mode,
        )


def parse_mock_llm(value: str, default_p: float) -> tuple[str, float]:
    """``noisy:0.2`` style values carry their own flip probability."""
    mode, _, p = value.partition(":")
    return mode, float(p) if p else default_p


def substream_seed(root: int, name: str) -> int:
    digest = hashlib.blake2b(f"{root}\x00{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass
class IterationRecord:
    iteration: int
    inertia: float
    kmeans_iters: int
    anchors: int = 0
    triplets: int = 0
    skipped_anchors: int = 0
    judged: int = 0
    neither: int = 0
    parse_failures: int = 0
    failed: int = 0
    train_triplets: int = 0
    epoch_losses: list[float] = field(default_factory=list)
    note: str | None = None
    metrics: dict[str, Any] = field(default_factory=dict)


@dataclass
class RunResult:
    manifest: dict[str, Any]
    state: ClusterState
    topics: list[TopicSummary]
    metrics: MetricsReport
    adapter: ft.Adapter
    embeddings: np.ndarray
    iterations: list[IterationRecord]


def build_embedder(config: PipelineConfig) -> EmbeddingBackend:
    cache = EmbeddingCache(config.cache_dir) if config.cache_dir else None
    if config.mock_embed:
        return OfflineHashEmbedder(config.embed_dim, seed=config.embed_seed, cache=cache)
    return RemoteEmbedder(
        config.embed_endpoint or "", config.embed_model, config.embed_dim, cache=cache,
        api_key_env=config.api_key_env, max_in_flight=config.max_in_flight,
    )


def build_judge(
    config: PipelineConfig,
    corpus: Corpus,
    labels: Mapping[str, str] | None,
    base: np.ndarray,
) -> tuple[JudgeBackend, JudgmentCache | None]:
    if config.mock_llm:
        mode, p = parse_mock_llm(config.mock_llm, config.noise_p)
        backend = MockJudge(
            mode, labels=labels, embeddings=base, ids=corpus.ids, p=p,
            seed=substream_seed(config.seed, "noise"),
        )
        return backend, None
    backend = RemoteJudge(config.llm_endpoint or "", config.llm_model, api_key_env=config.api_key_env)
    assert config.cache_dir is not None
    return backend, JudgmentCache(cache_path_for(config.cache_dir, backend))


def evaluate(
    corpus: Corpus,
    doc_sets: Sequence[set[str]],
    space: np.ndarray,
    assign: np.ndarray,
    K: int,
    top_k: int,
    gold: Sequence[str] | None,
    coherence: str = "paper",
) -> tuple[MetricsReport, list[TopicSummary]]:
    topics = summarize(corpus, assign, K, top_k)
    report = MetricsReport()
    word_lists = [[t for t, _ in s.terms] for s in topics if s.terms]
    if word_lists:
        cooc = CooccurrenceStats.from_documents(doc_sets, {w for ws in word_lists for w in ws})
        report.tc = topic_coherence(word_lists, cooc, coherence, report.flags)
        report.td = topic_diversity(word_lists, top_k, report.flags)
    else:
        report.flags.append("no topic has any term")
    if np.unique(assign).size >= 2:
        report.chi = calinski_harabasz(space, assign)
        if np.isinf(report.chi):
            report.flags.append("chi: within-cluster scatter is zero")
        try:
            report.dbi = davies_bouldin(space, assign)
        except ValueError as exc:
            report.flags.append(f"dbi: {exc}")
    else:
        report.flags.append("fewer than two non-empty clusters")
    empty = K - np.unique(assign).size
    if empty:
        report.flags.append(f"{empty} empty clusters")
    if gold is not None:
        report.acc, report.nmi, report.ari = labeled_metrics(assign, gold)
    return report, topics


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def write_assignments(path: Path, ids: Sequence[str], assign: np.ndarray) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster"])
        for doc_id, c in zip(ids, assign):
            w.writerow([doc_id, int(c)])


def read_assignments(path: str | Path) -> dict[str, int]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] == ["id", "cluster"]:
        rows = rows[1:]
    return {r[0]: int(r[1]) for r in rows if r}


def prepare_corpus(config: PipelineConfig, corpus: Corpus | None = None) -> Corpus:
    if corpus is None:
        if not config.input:
            raise ValueError("no input corpus given")
        corpus = load_corpus(config.input)
    stop = ENGLISH_STOPWORDS if config.stopwords == "english" else frozenset()
    if config.stopwords not in ("english", "none"):
        stop = frozenset(Path(config.stopwords).read_text(encoding="utf-8").split())
    return tokenize(corpus, TokenizeConfig(stopwords=stop, min_df=config.min_df))


def run(
    config: PipelineConfig,
    corpus: Corpus | None = None,
    labels: Mapping[str, str] | None = None,
    embedder: EmbeddingBackend | None = None,
    judge_backend: JudgeBackend | None = None,
    write: bool = True,
    train_fn: Callable[..., ft.TrainResult] | None = None,
) -> RunResult:
    """Embed, cluster, then refine for ``config.iterations`` rounds.

    Injected ``embedder``/``judge_backend`` replace the ones the config would
    build, which lets sweeps share caches and tests observe calls.
    """
    config.validate()
    train_fn = train_fn or ft.train
    out = Path(config.out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    corpus = prepare_corpus(config, corpus)
    if labels is None and config.labels:
        labels = load_labels(config.labels)
    gold = labels_for(corpus, labels) if labels is not None else None
    ids = corpus.ids
    if len(corpus) < config.k:
        raise ValueError(f"corpus has {len(corpus)} documents, fewer than k={config.k}")

    manifest: dict[str, Any] = {
        "config": dataclasses.asdict(config),
        "n_documents": len(corpus),
        "vocabulary_size": len(corpus.vocabulary),
        "iterations": [],
        "status": "running",
    }
    records: list[IterationRecord] = []
    embedder = embedder or build_embedder(config)
    manifest["embedder"] = embedder.backend_id
    doc_sets = doc_term_sets(corpus)
    kmeans_seed = substream_seed(config.seed, "kmeans")
    iteration = 0

    def flush() -> None:
        manifest["iterations"] = [dataclasses.asdict(r) for r in records]
        if write:
            _write_json(out / "manifest.json", manifest)

    try:
        base = embed_corpus(embedder, corpus, EmptyFieldPolicy(config.empty_field_policy))
        adapter = ft.Adapter.load(config.load_adapter) if config.load_adapter else ft.Adapter.identity(base.shape[1])
        space = ft.apply_adapter(adapter, base)
        state = kmeans(space, config.k, kmeans_seed, config.kmeans_max_iter, config.kmeans_tol, config.alpha,
                           config.kmeans_restarts)
        report, topics = evaluate(corpus, doc_sets, space, state.hard_assign, config.k, config.top_k, gold,
                                  config.coherence)
        records.append(IterationRecord(0, state.inertia, state.n_iter, metrics=report.to_json()))

        judge_backend_, jcache = (judge_backend, None) if judge_backend is not None else (
            build_judge(config, corpus, labels, base) if config.iterations > 0 else (None, None))
        if judge_backend_ is not None:
            manifest["judge"] = judge_backend_.name
        sampler_cfg = config.sampler_config()
        collected: dict[str, TripletJudgment] = {}
        anchor_entropy: dict[str, float] = {}

        for iteration in range(1, config.iterations + 1):
            soft = soft_assign(state, space)
            ent = entropy_records(state, space, soft, sampler_cfg, ids)
            anchors = select_anchors(ent, sampler_cfg)
            if config.triplets_per_iter is not None:
                anchors = anchors[:config.triplets_per_iter]
            rec = IterationRecord(iteration, state.inertia, state.n_iter, anchors=len(anchors))
            if not anchors:
                rec.note = "no anchors inside the entropy band; refinement converged"
                records.append(rec)
                break
            triplets, skipped = build_triplets(
                anchors, ent, state, ids, substream_seed(config.seed, f"sampler:{iteration}"))
            rec.triplets, rec.skipped_anchors = len(triplets), skipped
            assert judge_backend_ is not None
            judgments, stats = judge_all(
                triplets, corpus, judge_backend_, jcache, config.prompt_budget,
                config.parse_retries, config.max_in_flight)
            rec.judged, rec.neither = stats.judged, stats.neither
            rec.parse_failures, rec.failed = stats.parse_failures, stats.failed
            by_id = {r.doc_id: r.normalized_entropy for r in ent}
            for j in usable_judgments(judgments):
                collected.setdefault(j.triplet.triplet_id, j)
                anchor_entropy[j.anchor] = by_id[j.anchor]
            usable = list(collected.values())
            rec.train_triplets = len(usable)
            if len(usable) < config.batch_size:
                rec.note = f"only {len(usable)} usable triplets (< batch_size {config.batch_size}); training skipped"
                records.append(rec)
                continue
            result = train_fn(
                usable, base, ids, config.finetune_config(substream_seed(config.seed, f"training:{iteration}")),
                entropies=anchor_entropy, adapter=adapter)
            adapter = result.adapter
            rec.epoch_losses = result.epoch_losses
            space = ft.apply_adapter(adapter, base)
            state = kmeans(space, config.k, kmeans_seed, config.kmeans_max_iter, config.kmeans_tol, config.alpha,
                           config.kmeans_restarts)
            report, topics = evaluate(corpus, doc_sets, space, state.hard_assign, config.k, config.top_k, gold,
                                      config.coherence)
            rec.inertia, rec.kmeans_iters = state.inertia, state.n_iter
            rec.metrics = report.to_json()
            records.append(rec)
            flush()
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"iteration {iteration}: {exc}"
        flush()
        raise PipelineError(f"iteration {iteration}: {exc}") from exc

    manifest["status"] = "ok"
    manifest["final"] = report.to_json()
    if write:
        artifacts = {
            "topics": "topics.json",
            "assignments": "assignments.csv",
            "metrics": "metrics.json",
            "manifest": "manifest.json",
            "wordclouds": "wordcloud",
        }
        write_topics_json(topics, out / "topics.json")
        write_assignments(out / "assignments.csv", ids, state.hard_assign)
        _write_json(out / "metrics.json", report.to_json())
        write_wordclouds(topics, out / "wordcloud")
        if config.dump_entropy:
            soft = soft_assign(state, space)
            write_entropy_csv(entropy_records(state, space, soft, sampler_cfg, ids), out / "entropy.csv")
            artifacts["entropy"] = "entropy.csv"
        if config.save_adapter:
            adapter.save(config.save_adapter, config.seed, config.finetune_config(config.seed))
            artifacts["adapter"] = str(config.save_adapter)
        manifest["artifacts"] = artifacts
    flush()
    return RunResult(manifest, state, topics, report, adapter, space, records)


SWEEPABLE = {
    "k": ("k", int), "alpha": ("alpha", float), "lambda": ("lam", float),
    "sigma_low": ("sigma_low", float), "sigma_high": ("sigma_high", float),
    "tau": ("tau", float), "gamma": ("gamma", float), "lr": ("lr", float),
    "epochs": ("epochs", int), "batch_size": ("batch_size", int),
    "iterations": ("iterations", int), "seed": ("seed", int), "top_k": ("top_k", int),
}

SWEEP_COLUMNS = ["value", "tc", "td", "chi", "dbi", "acc", "nmi", "ari"]


def sweep(
    config: PipelineConfig,
    param: str,
    values: Sequence[str | float | int],
    corpus: Corpus | None = None,
    labels: Mapping[str, str] | None = None,
    embedder: EmbeddingBackend | None = None,
    write: bool = True,
) -> list[dict[str, Any]]:
    """Re-run the pipeline once per value, sharing the embedding backend and its caches."""
    key = param.replace("-", "_")
    if key not in SWEEPABLE:
        raise ValueError(f"unknown sweep parameter {param!r}; choose from {sorted(SWEEPABLE)}")
    fname, cast = SWEEPABLE[key]
    config.validate()
    corpus = corpus if corpus is not None else load_corpus(config.input)  # type: ignore[arg-type]
    if labels is None and config.labels:
        labels = load_labels(config.labels)
    embedder = embedder or build_embedder(config)
    rows = []
    for value in values:
        v = cast(value)
        sub = dataclasses.replace(config, **{fname: v}, out_dir=str(Path(config.out_dir) / f"{key}={v}"))
        result = run(sub, corpus, labels, embedder, write=write)
        m = result.metrics.to_json()
        rows.append({"value": v, **{c: m.get(c) for c in SWEEP_COLUMNS[1:]}})
    if write:
        Path(config.out_dir).mkdir(parents=True, exist_ok=True)
        with (Path(config.out_dir) / f"sweep_{key}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([key] + SWEEP_COLUMNS[1:])
            for r in rows:
                w.writerow([r["value"]] + ["" if r[c] is None else repr(float(r[c])) for c in SWEEP_COLUMNS[1:]])
    return rows
