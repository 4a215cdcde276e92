"""Encode intent benchmarks into the shared JSONL feature format."""

__version__ = "0.1.0"
