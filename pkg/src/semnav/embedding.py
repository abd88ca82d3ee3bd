"""Deterministic in-process text embeddings.

Hashed character trigram counts in a fixed-width vector, L2-normalized.
No model weights, no network: two processes embed identical text to
identical vectors, which keeps clustering and retrieval reproducible.
"""

import zlib

import numpy as np

DIM = 256
_NGRAM = 3


def embed(text: str) -> np.ndarray:
    if not text:
        raise ValueError("cannot embed empty text")
    s = f" {text.strip().lower()} "
    v = np.zeros(DIM)
    for i in range(len(s) - _NGRAM + 1):
        gram = s[i:i + _NGRAM]
        v[zlib.crc32(gram.encode("utf-8")) % DIM] += 1.0
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped to [0, 1]."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, float(a @ b) / (na * nb))))
