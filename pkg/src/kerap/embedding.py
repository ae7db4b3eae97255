"""Entity-name embeddings and exact top-k cosine candidate search."""

from __future__ import annotations

import hashlib
import math
import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Protocol

import httpx
import numpy as np

from .transport import RetryPolicy, post_json

DEFAULT_DIMENSION = 768
DEFAULT_CANDIDATE_COUNT = 10


class InvalidInputError(ValueError):
    pass


class InvalidStateError(RuntimeError):
    pass


class EmbeddingProvider(Protocol):
    dimension: int

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


class HashEmbeddingProvider:
    """Deterministic pseudo-embedding from signed, hashed character trigrams.

    The text is lowercased, runs of whitespace collapse to one space, and one
    space pads each end. Every character trigram ``g`` is hashed with
    ``blake2b(g.encode("utf-8"), digest_size=8, key=seed as 8 little-endian bytes)``;
    the digest read as a little-endian integer ``h`` selects component
    ``h % dimension`` and adds +1, or -1 when bit 63 of ``h`` is set. If every
    component cancels to zero, the whole padded text is hashed the same way and
    that component is set to 1. Components are small integers stored as float64,
    so dot products are exact.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 0) -> None:
        if dimension < 1:
            raise InvalidInputError("dimension must be >= 1")
        self.dimension = dimension
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)

    def _hash(self, s: str) -> int:
        return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8, key=self._key).digest(), "little")

    def embed_one(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise InvalidInputError("text must be nonempty")
        padded = " " + " ".join(text.lower().split()) + " "
        vec = np.zeros(self.dimension, dtype=np.float64)
        for i in range(len(padded) - 2):
            h = self._hash(padded[i : i + 3])
            vec[h % self.dimension] += -1.0 if h >> 63 else 1.0
        if not vec.any():
            vec[self._hash(padded) % self.dimension] = 1.0
        return vec

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dimension), dtype=np.float64)
        for i, t in enumerate(texts):
            out[i] = self.embed_one(t)
        return out


class HttpEmbeddingProvider:
    """Client for an embeddings endpoint: ``{"input": [...]}`` -> ``data[i].embedding``."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dimension: int = DEFAULT_DIMENSION,
        *,
        api_key: str | None = None,
        timeout: float = 60.0,
        retry: RetryPolicy = RetryPolicy(),
        client: httpx.Client | None = None,
    ) -> None:
        self.url = base_url.rstrip("/") + "/embeddings"
        self.model = model
        self.dimension = dimension
        self._api_key = api_key if api_key is not None else os.environ.get("KERAP_API_KEY")
        self._retry = retry
        self._client = client or httpx.Client(timeout=timeout)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if any(not t or not t.strip() for t in texts):
            raise InvalidInputError("text must be nonempty")
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else None
        body = post_json(self._client, self.url, {"model": self.model, "input": list(texts)}, headers=headers, policy=self._retry)
        data = sorted(body["data"], key=lambda d: d.get("index", 0))
        out = np.asarray([d["embedding"] for d in data], dtype=np.float64)
        if out.shape != (len(texts), self.dimension):
            raise InvalidInputError(f"expected {(len(texts), self.dimension)} embeddings, got {out.shape}")
        if not np.isfinite(out).all():
            raise InvalidInputError("provider returned non-finite components")
        return out


def embed(provider: EmbeddingProvider, text: str) -> np.ndarray:
    if not text or not text.strip():
        raise InvalidInputError("text must be nonempty")
    return provider.embed_batch([text])[0]


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity clamped to [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise InvalidInputError("zero vector")
    return _clamp(float(np.dot(a, b)) / (na * nb))


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class LinkCandidate:
    entity: str
    name: str
    score: float


@dataclass(frozen=True)
class LinkerConfig:
    candidate_count: int = DEFAULT_CANDIDATE_COUNT
    provider: str = "hash"

    def __post_init__(self) -> None:
        if self.candidate_count < 1:
            raise InvalidInputError("candidate_count must be >= 1")


class EmbeddingIndex:
    """Exhaustive cosine index over entity names. Immutable once built."""

    def __init__(self, ids: Sequence[str], names: Sequence[str], matrix: np.ndarray, provider: EmbeddingProvider) -> None:
        if len(ids) != len(names) or matrix.shape[0] != len(ids):
            raise InvalidInputError("ids, names and matrix rows must align")
        self.ids = tuple(ids)
        self.names = tuple(names)
        self.provider = provider
        self._matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        self._matrix.setflags(write=False)
        self._norms = np.sqrt(np.einsum("ij,ij->i", self._matrix, self._matrix))
        # position of each row in ascending-id order, the tie-break key
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.ids))

    @classmethod
    def build(cls, entries: Iterable[tuple[str, str]], provider: EmbeddingProvider, batch_size: int = 256) -> EmbeddingIndex:
        entries = list(entries)
        ids = [e[0] for e in entries]
        names = [e[1] for e in entries]
        chunks = [provider.embed_batch(names[i : i + batch_size]) for i in range(0, len(names), batch_size)]
        matrix = np.vstack(chunks) if chunks else np.zeros((0, provider.dimension))
        return cls(ids, names, matrix, provider)

    @classmethod
    def from_store(cls, store, provider: EmbeddingProvider, batch_size: int = 256) -> EmbeddingIndex:
        return cls.build(((e.id, e.name) for e in store.entities()), provider, batch_size)

    def __len__(self) -> int:
        return len(self.ids)

    def scores(self, query: np.ndarray) -> np.ndarray:
        qn = math.sqrt(float(np.dot(query, query)))
        if qn == 0.0:
            raise InvalidInputError("zero query vector")
        denom = self._norms * qn
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = np.where(denom > 0, (self._matrix @ query) / denom, 0.0)
        return np.clip(raw, 0.0, 1.0)

    def top(self, query: np.ndarray, k: int) -> list[LinkCandidate]:
        n = len(self.ids)
        if n == 0:
            raise InvalidStateError("index is empty")
        scores = self.scores(query)
        k = min(k, n)
        if k < n:
            kth = np.partition(scores, n - k)[n - k]
            pool = np.flatnonzero(scores >= kth)
        else:
            pool = np.arange(n)
        order = pool[np.lexsort((self._id_rank[pool], -scores[pool]))][:k]
        return [LinkCandidate(self.ids[i], self.names[i], float(scores[i])) for i in order]


def top_candidates(index: EmbeddingIndex, mention: str, cfg: LinkerConfig = LinkerConfig()) -> list[LinkCandidate]:
    """The ``cfg.candidate_count`` entities most cosine-similar to ``mention``.

    Sorted by score descending, ties by entity id ascending.
    """
    if len(index) == 0:
        raise InvalidStateError("index is empty")
    return index.top(embed(index.provider, mention), cfg.candidate_count)
