"""Embedding providers, cosine ranking, and top-k document retrieval.

Scoring is exhaustive (no ANN index): the corpora this targets are at most
tens of thousands of chunks, and determinism matters more than speed here.
"""

from __future__ import annotations

import abc
import hashlib
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCorpus, ProviderError, ZeroNorm
from .model import DocumentChunk, Query

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def cosine(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine similarity a.b / (|a| |b|), clamped to [-1, 1] against fp drift."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.ndim != 1 or vb.ndim != 1 or va.shape != vb.shape:
        raise DimensionMismatch(f"incompatible shapes {va.shape} and {vb.shape}")
    if va.size == 0:
        raise DimensionMismatch("vectors must have dimension > 0")
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroNorm("cosine undefined for an all-zero vector")
    value = float(np.dot(va, vb) / (norm_a * norm_b))
    return max(-1.0, min(1.0, value))


class EmbeddingProvider(abc.ABC):
    """Maps texts to fixed-dimension vectors."""

    name: str = "embedding"

    @abc.abstractmethod
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        """Embed texts in order. Raises ProviderError on failure."""

    @property
    def fingerprint(self) -> str:
        """Cache key component identifying the provider and its parameters."""
        return self.name


class HashEmbeddingProvider(EmbeddingProvider):
    """Deterministic offline embeddings: feature-hashed token counts, L2-normalized.

    Not semantically meaningful, but stable across runs and platforms, which
    is what tests and fixtures need.
    """

    name = "hash"

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    @property
    def fingerprint(self) -> str:
        return f"hash:{self.dim}"

    def _bucket(self, token: str) -> int:
        digest = hashlib.md5(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        vectors = []
        for text in texts:
            counts = np.zeros(self.dim, dtype=np.float64)
            tokens = _TOKEN_RE.findall(text.lower())
            if tokens:
                for token in tokens:
                    counts[self._bucket(token)] += 1.0
            else:
                # token-free text still needs a unit vector; hash the raw text
                counts[self._bucket(f"\x00{text}")] = 1.0
            vectors.append(counts / np.linalg.norm(counts))
        return vectors


class RemoteEmbeddingProvider(EmbeddingProvider):
    """OpenAI-compatible /embeddings endpoint with retries and bounded parallelism."""

    name = "remote"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 30.0,
        batch_size: int = 64,
        parallelism: int = 4,
        max_attempts: int = 3,
        backoff_s: float = 0.5,
        transport=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.batch_size = max(1, batch_size)
        self.parallelism = max(1, parallelism)
        self.max_attempts = max(1, max_attempts)
        self.backoff_s = backoff_s
        self._transport = transport
        self._client = None

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.base_url}:{self.model}"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _get_client(self):
        import httpx

        if self._client is None:
            self._client = httpx.Client(timeout=self.timeout, transport=self._transport)
        return self._client

    def _embed_batch(self, batch: Sequence[str]) -> list[np.ndarray]:
        import httpx

        payload = {"model": self.model, "input": list(batch)}
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                response = self._get_client().post(
                    f"{self.base_url}/embeddings", json=payload, headers=self._headers()
                )
                response.raise_for_status()
                data = response.json()["data"]
                data = sorted(data, key=lambda entry: entry.get("index", 0))
                if len(data) != len(batch):
                    raise ProviderError(
                        f"embeddings endpoint returned {len(data)} vectors for "
                        f"{len(batch)} inputs"
                    )
                return [np.asarray(entry["embedding"], dtype=np.float64) for entry in data]
            except ProviderError:
                raise
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff_s * (2**attempt))
        raise ProviderError(
            f"embedding request failed after {self.max_attempts} attempts: {last_error}"
        ) from last_error

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        batches = [
            texts[start : start + self.batch_size]
            for start in range(0, len(texts), self.batch_size)
        ]
        if not batches:
            return []
        if len(batches) == 1:
            return self._embed_batch(batches[0])
        with ThreadPoolExecutor(max_workers=min(self.parallelism, len(batches))) as pool:
            results = list(pool.map(self._embed_batch, batches))
        return [vector for batch in results for vector in batch]


class CachedEmbeddingProvider(EmbeddingProvider):
    """Content-addressed on-disk cache in front of another provider.

    Keys combine the inner provider's fingerprint with a content hash, so one
    directory can serve several providers. Writes are atomic (tmp + rename),
    making concurrent readers/writers safe.
    """

    name = "cached"

    def __init__(self, inner: EmbeddingProvider, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    @property
    def fingerprint(self) -> str:
        return self.inner.fingerprint

    def _path_for(self, text: str) -> Path:
        key = hashlib.sha256(
            f"{self.inner.fingerprint}\x00{text}".encode("utf-8")
        ).hexdigest()
        return self.cache_dir / key[:2] / f"{key}.json"

    def _load(self, path: Path) -> np.ndarray | None:
        try:
            with open(path, encoding="utf-8") as handle:
                return np.asarray(json.load(handle), dtype=np.float64)
        except (OSError, ValueError):
            return None

    def _store(self, path: Path, vector: np.ndarray) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp-{os.getpid()}-{id(vector)}")
        with open(tmp, "w", encoding="utf-8") as handle:
            json.dump([float(x) for x in vector], handle)
        os.replace(tmp, path)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        vectors: list[np.ndarray | None] = []
        misses: list[tuple[int, str]] = []
        for position, text in enumerate(texts):
            cached = self._load(self._path_for(text))
            vectors.append(cached)
            if cached is None:
                misses.append((position, text))
        if misses:
            fresh = self.inner.embed([text for _, text in misses])
            for (position, text), vector in zip(misses, fresh):
                self._store(self._path_for(text), vector)
                vectors[position] = vector
        return [v for v in vectors if v is not None]


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 5
    provider: str = "hash"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


def rank_documents(
    query: Query, corpus: Sequence[DocumentChunk], embedder: EmbeddingProvider
) -> list[tuple[float, DocumentChunk]]:
    """Score every document against the query, best first.

    Ties break on ascending document id so rankings are deterministic.
    """
    if not corpus:
        raise EmptyCorpus("cannot retrieve from an empty corpus")
    vectors = embedder.embed([query.text] + [doc.text for doc in corpus])
    query_vector = vectors[0]
    scored = [
        (cosine(query_vector, vector), doc)
        for vector, doc in zip(vectors[1:], corpus)
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1].id))
    return scored


def retrieve(
    query: Query,
    corpus: Sequence[DocumentChunk],
    cfg: RetrievalConfig,
    embedder: EmbeddingProvider,
) -> list[DocumentChunk]:
    """Top-k documents by cosine similarity of query/document embeddings."""
    return [doc for _, doc in rank_documents(query, corpus, embedder)[: cfg.k]]
