"""Audit harness measuring recency bias in LLM rerankers via synthetic date injection."""

__version__ = "0.1.0"
