"""Command line entry point: ``scitopic run | sweep | score``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import finetune as ft
from .corpus import doc_term_sets, labels_for, load_labels
from .embedder import EmptyFieldPolicy, embed_corpus
from .metrics import (
    CooccurrenceStats,
    MetricsReport,
    calinski_harabasz,
    davies_bouldin,
    labeled_metrics,
    topic_coherence,
    topic_diversity,
)
from .pipeline import (
    PipelineConfig,
    PipelineError,
    build_embedder,
    prepare_corpus,
    read_assignments,
    run,
    sweep,
)
from .verbalize import read_topics_json

log = logging.getLogger("scitopic")

# flag spellings that differ from the config field name
_ALIASES = {"lambda": "lam"}
_FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)}


def _field_name(key: str) -> str:
    key = key.replace("-", "_")
    return _ALIASES.get(key, key)


def load_config_file(path: str | Path) -> dict[str, Any]:
    """JSON object whose keys are config fields or flag names."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    out = {}
    for key, value in raw.items():
        name = _field_name(key)
        if name not in _FIELDS:
            raise ValueError(f"{path}: unknown config key {key!r}")
        out[name] = value
    return out


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file with defaults; flags override it")
    p.add_argument("--input", default=S, help="corpus JSONL")
    p.add_argument("--labels", default=S, help="gold labels CSV (id,label)")
    p.add_argument("--out-dir", dest="out_dir", default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--lambda", dest="lam", type=float, default=S)
    p.add_argument("--sigma-low", dest="sigma_low", type=float, default=S)
    p.add_argument("--sigma-high", dest="sigma_high", type=float, default=S)
    p.add_argument("--n-anchors", dest="n_anchors", type=int, default=S)
    p.add_argument("--triplets-per-iter", dest="triplets_per_iter", type=int, default=S)
    p.add_argument("--tau", type=float, default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    p.add_argument("--no-entropy-weighting", dest="entropy_weighting", action="store_false", default=S)
    p.add_argument("--margin-mode", dest="margin_mode", choices=["uniform", "negatives"], default=S)
    p.add_argument("--iterations", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--top-k", dest="top_k", type=int, default=S)
    p.add_argument("--min-df", dest="min_df", type=int, default=S)
    p.add_argument("--stopwords", default=S, help="'english', 'none' or a file of words")
    p.add_argument("--empty-field-policy", dest="empty_field_policy", choices=["embed_empty", "zero"], default=S)
    p.add_argument("--coherence", choices=["paper", "npmi-mean"], default=S)
    p.add_argument("--kmeans-restarts", dest="kmeans_restarts", type=int, default=S)
    p.add_argument("--prompt-budget", dest="prompt_budget", type=int, default=S)
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int, default=S)
    p.add_argument("--mock-embed", dest="mock_embed", action="store_true", default=S)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=S)
    p.add_argument("--embed-endpoint", dest="embed_endpoint", default=S)
    p.add_argument("--embed-model", dest="embed_model", default=S)
    p.add_argument("--mock-llm", dest="mock_llm", default=S,
                   help="label_oracle, cosine_oracle or noisy[:p]")
    p.add_argument("--noise-p", dest="noise_p", type=float, default=S)
    p.add_argument("--llm-endpoint", dest="llm_endpoint", default=S)
    p.add_argument("--llm-model", dest="llm_model", default=S)
    p.add_argument("--api-key-env", dest="api_key_env", default=S)
    p.add_argument("--cache-dir", dest="cache_dir", default=S)
    p.add_argument("--dump-entropy", dest="dump_entropy", action="store_true", default=S)
    p.add_argument("--save-adapter", dest="save_adapter", default=S)
    p.add_argument("--load-adapter", dest="load_adapter", default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scitopic", description="Topic discovery over scientific corpora.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_pipeline_flags(sub.add_parser("run", help="embed, cluster, refine and write outputs"))

    sw = sub.add_parser("sweep", help="re-run over a list of values for one parameter")
    _add_pipeline_flags(sw)
    sw.add_argument("--param", required=True)
    sw.add_argument("--values", required=True, help="comma separated")

    sc = sub.add_parser("score", help="recompute metrics for an existing topics.json")
    sc.add_argument("--topics", required=True)
    sc.add_argument("--input", required=True)
    sc.add_argument("--assignments", help="assignments.csv; enables CHI/DBI and labelled metrics")
    sc.add_argument("--labels")
    sc.add_argument("--top-k", dest="top_k", type=int, default=10)
    sc.add_argument("--min-df", dest="min_df", type=int, default=2)
    sc.add_argument("--stopwords", default="english")
    sc.add_argument("--coherence", choices=["paper", "npmi-mean"], default="paper")
    sc.add_argument("--mock-embed", dest="mock_embed", action="store_true")
    sc.add_argument("--embed-dim", dest="embed_dim", type=int, default=64)
    sc.add_argument("--embed-endpoint", dest="embed_endpoint")
    sc.add_argument("--embed-model", dest="embed_model", default="bge-m3")
    sc.add_argument("--cache-dir", dest="cache_dir")
    sc.add_argument("--load-adapter", dest="load_adapter")
    sc.add_argument("--out", help="write the metrics JSON here as well as to stdout")
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for name in _FIELDS:
        if name in vars(args):
            values[name] = getattr(args, name)
    return PipelineConfig(**values)


def score(args: argparse.Namespace) -> MetricsReport:
    cfg = PipelineConfig(input=args.input, min_df=args.min_df, stopwords=args.stopwords,
                         mock_embed=args.mock_embed, embed_dim=args.embed_dim,
                         embed_endpoint=args.embed_endpoint, embed_model=args.embed_model,
                         cache_dir=args.cache_dir)
    corpus = prepare_corpus(cfg)
    topics = read_topics_json(args.topics)
    words = [[t for t, _ in s.terms][:args.top_k] for s in topics if s.terms]
    report = MetricsReport()
    if words:
        stats = CooccurrenceStats.from_documents(doc_term_sets(corpus), {w for ws in words for w in ws})
        report.tc = topic_coherence(words, stats, args.coherence, report.flags)
        report.td = topic_diversity(words, args.top_k, report.flags)
    if args.assignments:
        by_id = read_assignments(args.assignments)
        missing = [d for d in corpus.ids if d not in by_id]
        if missing:
            raise ValueError(f"assignments lack {len(missing)} documents, e.g. {missing[0]!r}")
        assign = np.array([by_id[d] for d in corpus.ids])
        if args.labels:
            report.acc, report.nmi, report.ari = labeled_metrics(assign, labels_for(corpus, load_labels(args.labels)))
        if args.mock_embed or args.embed_endpoint:
            space = embed_corpus(build_embedder(cfg), corpus, EmptyFieldPolicy.EMBED_EMPTY)
            if args.load_adapter:
                space = ft.apply_adapter(ft.Adapter.load(args.load_adapter), space)
            report.chi = calinski_harabasz(space, assign)
            report.dbi = davies_bouldin(space, assign)
    return report


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            result = run(config_from_args(args))
            print(json.dumps(result.manifest["final"], indent=2))
        elif args.command == "sweep":
            rows = sweep(config_from_args(args), args.param, [v.strip() for v in args.values.split(",") if v.strip()])
            print(json.dumps(rows, indent=2))
        else:
            doc = score(args).to_json()
            text = json.dumps(doc, indent=2)
            if args.out:
                Path(args.out).write_text(text + "\n", encoding="utf-8")
            print(text)
    except (ValueError, OSError, PipelineError) as exc:
        print(f"scitopic: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
