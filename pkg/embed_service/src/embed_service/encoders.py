"""Embedding backends behind one contract: encode(texts) -> 768-dim vectors.

Vectors are L2-normalized and deterministic for a fixed model id. The
transformer backend loads lazily so the service can come up and report
not-ready instead of blocking.
"""

from __future__ import annotations

import hashlib
import re
import threading
from typing import Protocol

import numpy as np

EMBED_DIM = 768

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class TextEncoder(Protocol):
    model_id: str

    @property
    def ready(self) -> bool: ...

    def encode(self, texts: list[str]) -> list[list[float]]: ...


class HashedNgramEncoder:
    """Signed feature hashing of token unigrams and bigrams.

    Dependency-free and bitwise reproducible; the offline stand-in for the
    transformer backend.
    """

    def __init__(self, dim: int = EMBED_DIM) -> None:
        self.dim = dim
        self.model_id = f"hashed-ngram-{dim}/1"

    @property
    def ready(self) -> bool:
        return True

    def _encode_one(self, text: str) -> list[float]:
        tokens = _TOKEN_RE.findall(text.lower())
        grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "big")
            vec[(h >> 1) % self.dim] += 1.0 if h & 1 else -1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec.tolist()

    def encode(self, texts: list[str]) -> list[list[float]]:
        return [self._encode_one(text) for text in texts]


class SentenceTransformerEncoder:
    """Pinned sentence-transformer checkpoint, loaded in the background."""

    def __init__(self, checkpoint: str) -> None:
        self.model_id = checkpoint
        self._model = None
        self._error: Exception | None = None
        self._lock = threading.Lock()
        threading.Thread(target=self._load, daemon=True).start()

    def _load(self) -> None:
        try:
            from sentence_transformers import SentenceTransformer

            model = SentenceTransformer(self.model_id)
            dim = model.get_sentence_embedding_dimension()
            if dim != EMBED_DIM:
                raise ValueError(
                    f"checkpoint {self.model_id} produces {dim}-dim vectors, "
                    f"need {EMBED_DIM}")
            with self._lock:
                self._model = model
        except Exception as exc:  # surfaced through /health and /embed
            with self._lock:
                self._error = exc

    @property
    def ready(self) -> bool:
        with self._lock:
            return self._model is not None

    @property
    def load_error(self) -> Exception | None:
        with self._lock:
            return self._error

    def encode(self, texts: list[str]) -> list[list[float]]:
        with self._lock:
            model = self._model
        if model is None:
            raise RuntimeError("model not loaded")
        vectors = model.encode(texts, normalize_embeddings=True,
                               convert_to_numpy=True, show_progress_bar=False)
        return np.asarray(vectors, dtype=np.float64).tolist()


def create_encoder(spec: str) -> TextEncoder:
    """Build a backend from a spec string: ``hashing`` or ``st:<checkpoint>``."""
    if spec == "hashing":
        return HashedNgramEncoder()
    if spec.startswith("st:"):
        return SentenceTransformerEncoder(spec[3:])
    raise ValueError(f"unknown encoder spec {spec!r}; use 'hashing' or 'st:<checkpoint>'")
