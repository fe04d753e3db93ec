"""Deterministic contextual token encoder.

Every token gets a base vector seeded from its own hash, then mixes in its
neighbors and its position, so the same word embeds differently in
different contexts. No weights are downloaded and two freshly constructed
encoders are bit-identical, which is what makes service restarts and
regression fixtures reproducible.
"""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache

import numpy as np

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

# fixed mixing weights; changing any of these is a new model_id
_W_SELF = 0.70
_W_NEIGHBOR = 0.15
_W_POSITION = 0.10
_POSITION_SEED = 0x5E11AB1E


def tokenize(text: str, max_tokens: int) -> list[str]:
    return _TOKEN_RE.findall(text.lower())[:max_tokens]


class HashConvEncoder:
    """The pinned built-in model: "hashconv-ctx-64-v1"."""

    model_id = "hashconv-ctx-64-v1"
    dim = 64

    def __init__(self, max_seq_len: int = 64):
        self.max_seq_len = max_seq_len
        rng = np.random.default_rng(_POSITION_SEED)
        self._positions = rng.standard_normal((max_seq_len, self.dim))

    @staticmethod
    @lru_cache(maxsize=65536)
    def _base_vector(token: str) -> tuple:
        seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        return tuple(rng.standard_normal(HashConvEncoder.dim))

    def encode(self, tokens: list[str]) -> np.ndarray:
        """(n, dim) matrix of L2-normalized contextual token embeddings."""
        if not tokens:
            raise ValueError("cannot encode an empty token sequence")
        base = np.array([self._base_vector(t) for t in tokens])
        prev_ = np.vstack([np.zeros((1, self.dim)), base[:-1]])
        next_ = np.vstack([base[1:], np.zeros((1, self.dim))])
        mixed = (
            _W_SELF * base
            + _W_NEIGHBOR * (prev_ + next_)
            + _W_POSITION * self._positions[: len(tokens)]
        )
        norms = np.linalg.norm(mixed, axis=1, keepdims=True)
        return mixed / norms

    def embed_text(self, text: str) -> tuple[list[str], np.ndarray]:
        tokens = tokenize(text, self.max_seq_len)
        if not tokens:
            raise ValueError("text produced no tokens")
        return tokens, self.encode(tokens)


_ENCODERS = {HashConvEncoder.model_id: HashConvEncoder}


def build_encoder(model_id: str, max_seq_len: int):
    try:
        encoder_cls = _ENCODERS[model_id]
    except KeyError:
        raise ValueError(
            f"unknown model_id {model_id!r}; available: {sorted(_ENCODERS)}"
        )
    return encoder_cls(max_seq_len=max_seq_len)
