"""Deterministic bag-of-words text embedding.

Stands in for a frozen neural text encoder: each token hashes (stably,
across runs and platforms) to a seed that draws a fixed Gaussian vector;
token vectors are summed and length-normalized. Word order is ignored.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .interleave import TEXT_DIM, TextEmbedding

_TOKEN_SALT = b"intersyn-token-v1"


def _token_vector(token: str) -> np.ndarray:
    digest = hashlib.blake2b(_TOKEN_SALT + token.encode("utf-8"), digest_size=8).digest()
    seed = int.from_bytes(digest, "little")
    return np.random.default_rng(seed).standard_normal(TEXT_DIM)


def pseudo_embed(text: str) -> TextEmbedding:
    """Embed whitespace-normalized, lowercased tokens as a normalized sum."""
    tokens = text.lower().split()
    vec = np.zeros(TEXT_DIM)
    for token in tokens:
        vec += _token_vector(token)
    norm = np.linalg.norm(vec)
    if norm > 1e-12:
        vec = vec / norm
    return TextEmbedding(vec, text)
