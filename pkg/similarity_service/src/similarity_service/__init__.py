"""Phrase-similarity scoring service with contextual token embeddings."""

__version__ = "0.1.0"
