from __future__ import annotations

import json
from pathlib import Path

import pytest

from scitopic.corpus import Document, make_corpus, tokenize, TokenizeConfig


def write_jsonl(path: Path, records: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def tiny_corpus():
    docs = [
        Document("a", "Graph neural networks", "Message passing on graph nodes.",
                 {"authors": ["A. One"], "year": 2019, "venue": "KDD"}),
        Document("b", "Graph embeddings", "Node embeddings for large graph data.",
                 {"authors": ["B. Two"], "year": 2020, "venue": "KDD"}),
        Document("c", "Image segmentation", "Pixel labels for image regions.",
                 {"authors": ["C. Three"], "year": 2020, "venue": "CVPR"}),
        Document("d", "Image classification", "Deep image models and pixel features.",
                 {"authors": ["D. Four"], "venue": "CVPR"}),
    ]
    return tokenize(make_corpus(docs), TokenizeConfig(min_df=1))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
