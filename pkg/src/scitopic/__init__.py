"""Topic discovery for scientific corpora with LLM-judged refinement."""

__version__ = "0.1.0"
