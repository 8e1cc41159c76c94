"""Hybrid sparse+dense retrieval over corpus chunks.

Chunks are indexed under an inverted term table (BM25 with natural-log IDF)
and a dense embedding matrix (exact linear-scan cosine). A query's fused
score is ``alpha * bm25 + (1 - alpha) * cosine``; in the default
``normalized`` mode the BM25 side is divided by the per-query maximum so the
two signals share a scale. The index is an immutable snapshot that persists
to a versioned JSON file and reloads byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .corpus import Chunk
from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyCorpus,
    EmptyQuery,
    IndexFormatError,
    ProviderUnavailable,
)
from .textutil import tokenize

__all__ = [
    "BM25Params",
    "CorpusStats",
    "EmbeddingProvider",
    "HashEmbeddingProvider",
    "HTTPEmbeddingProvider",
    "HybridParams",
    "Index",
    "ScoredHit",
    "bm25_score",
    "build_index",
    "embed",
    "idf",
    "search",
    "tokenize",
]

UNIT_NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.5
    b: float = 0.75


@dataclass(frozen=True)
class HybridParams:
    alpha: float = 0.3
    top_k: int = 3
    mode: str = "normalized"  # or "raw"


@dataclass
class CorpusStats:
    """Corpus-level term statistics: chunk count, mean length, document
    frequency per term."""

    N: int
    avg_len: float
    doc_freq: dict[str, int]


@dataclass(frozen=True)
class ScoredHit:
    chunk_id: str
    bm25: float
    cosine: float
    score: float


def idf(term: str, stats: CorpusStats) -> float:
    """Natural-log inverse document frequency; absent terms use n = 0."""
    if stats.N < 1:
        raise EmptyCorpus("IDF requires at least one indexed chunk")
    n = stats.doc_freq.get(term, 0)
    return math.log((stats.N - n + 0.5) / (n + 0.5) + 1.0)


def bm25_score(
    query_terms: Sequence[str],
    term_freqs: Counter,
    term_count: int,
    stats: CorpusStats,
    params: BM25Params = BM25Params(),
) -> float:
    """Sparse keyword score of one chunk for the given query terms.

    Sums per query-term occurrence, so repeated query terms contribute
    repeatedly. Terms absent from the chunk contribute zero.
    """
    if stats.N < 1:
        raise EmptyCorpus("BM25 requires at least one indexed chunk")
    score = 0.0
    length_norm = params.k1 * (1.0 - params.b + params.b * term_count / stats.avg_len)
    for term in query_terms:
        f = term_freqs.get(term, 0)
        if f == 0:
            continue
        score += idf(term, stats) * f * (params.k1 + 1.0) / (f + length_norm)
    return score


# --- embedding providers ------------------------------------------------------

class EmbeddingProvider(Protocol):
    """Fixed-dimension text encoder; outputs are unit-normalized (or zero
    for token-free text)."""

    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbeddingProvider:
    """Deterministic unit-normalized bag-of-terms projection.

    Each term maps to a fixed slot by hashing, so identical texts embed
    identically and texts with disjoint term sets are orthogonal up to slot
    collisions (choose a dimension large enough for the vocabulary at play).
    """

    def __init__(self, dimension: int = 1024) -> None:
        self.dimension = dimension

    def slot(self, term: str) -> int:
        digest = hashlib.blake2b(term.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dimension, dtype=np.float64)
        for term, count in Counter(tokenize(text)).items():
            vector[self.slot(term)] += float(count)
        norm = float(np.linalg.norm(vector))
        return vector / norm if norm > 0.0 else vector


class HTTPEmbeddingProvider:
    """Client for an HTTP embedding endpoint.

    Configuration comes from ``EMBED_API_BASE`` / ``EMBED_API_KEY`` unless
    given explicitly; responses are unit-normalized on receipt; in-flight
    requests are bounded.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        *,
        dimension: int = 0,
        model: str = "default",
        timeout: float = 30.0,
        max_in_flight: int = 8,
    ) -> None:
        self.base_url = (base_url or os.environ.get("EMBED_API_BASE", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("EMBED_API_KEY", "")
        self.dimension = dimension  # 0 = fixed by the first response
        self.model = model
        self.timeout = timeout
        self._gate = threading.BoundedSemaphore(max_in_flight)
        if not self.base_url:
            raise ProviderUnavailable("no embedding endpoint configured (set EMBED_API_BASE)")

    def embed(self, text: str) -> np.ndarray:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            with self._gate:
                response = httpx.post(
                    f"{self.base_url}/embeddings",
                    json={"model": self.model, "input": [text]},
                    headers=headers,
                    timeout=self.timeout,
                )
            response.raise_for_status()
            values = response.json()["data"][0]["embedding"]
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"embedding request failed: {exc}") from exc
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderUnavailable(f"malformed embedding response: {exc}") from exc
        vector = np.asarray(values, dtype=np.float64)
        if self.dimension == 0:
            self.dimension = vector.shape[0]
        if vector.shape[0] != self.dimension:
            raise DimensionMismatch(
                f"provider returned dimension {vector.shape[0]}, expected {self.dimension}"
            )
        norm = float(np.linalg.norm(vector))
        return vector / norm if norm > 0.0 else vector


def embed(text: str, provider: EmbeddingProvider) -> np.ndarray:
    """Encode text through the provider; result is unit-norm or zero."""
    vector = provider.embed(text)
    if vector.shape != (provider.dimension,):
        raise DimensionMismatch(
            f"provider produced shape {vector.shape}, expected ({provider.dimension},)"
        )
    return vector


# --- index ---------------------------------------------------------------------

INDEX_FORMAT_VERSION = 1


class Index:
    """Immutable retrieval snapshot: chunks, term postings, embeddings."""

    def __init__(
        self,
        chunks: list[Chunk],
        embeddings: np.ndarray,
        bm25_params: BM25Params,
        provider: EmbeddingProvider | None = None,
    ) -> None:
        if not chunks:
            raise EmptyCorpus("an index needs at least one chunk")
        ids = [c.id for c in chunks]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DuplicateId(f"duplicate chunk ids: {dupes}")
        if embeddings.shape[0] != len(chunks):
            raise DimensionMismatch(
                f"{embeddings.shape[0]} embeddings for {len(chunks)} chunks"
            )
        self.chunks = list(chunks)
        self.embeddings = embeddings
        self.bm25_params = bm25_params
        self.provider = provider
        self.dimension = int(embeddings.shape[1])
        self._by_id = {c.id: c for c in chunks}
        self._tfs = [Counter(tokenize(c.text)) for c in chunks]
        doc_freq: dict[str, int] = {}
        for tf in self._tfs:
            for term in tf:
                doc_freq[term] = doc_freq.get(term, 0) + 1
        self.stats = CorpusStats(
            N=len(chunks),
            avg_len=sum(c.term_count for c in chunks) / len(chunks),
            doc_freq=doc_freq,
        )

    def chunk(self, chunk_id: str) -> Chunk:
        return self._by_id[chunk_id]

    @property
    def version(self) -> str:
        """Content fingerprint of the indexed chunk ids, for health reports."""
        joined = "\x1e".join(c.id for c in self.chunks)
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:12]

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": INDEX_FORMAT_VERSION,
            "dimension": self.dimension,
            "N": self.stats.N,
            "k1": self.bm25_params.k1,
            "b": self.bm25_params.b,
            "chunks": [asdict(c) for c in self.chunks],
            "embeddings": [[float(x) for x in row] for row in self.embeddings],
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path, provider: EmbeddingProvider | None = None) -> "Index":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IndexFormatError(f"{path}: not a valid index file: {exc}") from exc
        version = payload.get("format_version")
        if version != INDEX_FORMAT_VERSION:
            raise IndexFormatError(
                f"{path}: format version {version!r}, this build reads {INDEX_FORMAT_VERSION}"
            )
        chunks = [Chunk(**c) for c in payload["chunks"]]
        embeddings = np.asarray(payload["embeddings"], dtype=np.float64)
        if embeddings.shape[1] != payload["dimension"]:
            raise IndexFormatError(f"{path}: embedding width disagrees with header dimension")
        if provider is not None and provider.dimension not in (0, payload["dimension"]):
            raise DimensionMismatch(
                f"index dimension {payload['dimension']} != provider dimension {provider.dimension}"
            )
        index = cls(
            chunks,
            embeddings,
            BM25Params(k1=payload["k1"], b=payload["b"]),
            provider=provider,
        )
        return index


def build_index(
    chunks: Sequence[Chunk],
    provider: EmbeddingProvider,
    bm25_params: BM25Params = BM25Params(),
) -> Index:
    """Embed every chunk and assemble the immutable snapshot.

    Raises:
        EmptyCorpus: no chunks given.
        DuplicateId: repeated chunk ids.
        DimensionMismatch: provider output width varies.
    """
    if not chunks:
        raise EmptyCorpus("cannot build an index over zero chunks")
    rows = []
    for chunk in chunks:
        vector = embed(chunk.text, provider)
        norm = float(np.linalg.norm(vector))
        if norm > 0.0 and abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
            raise ValueError(
                f"provider returned a non-unit embedding for chunk {chunk.id!r} (norm {norm})"
            )
        rows.append(vector)
    return Index(list(chunks), np.vstack(rows), bm25_params, provider=provider)


def search(index: Index, query: str, params: HybridParams = HybridParams()) -> list[ScoredHit]:
    """Top-K fused-score hits, ties broken by ascending chunk id.

    Raises:
        EmptyQuery: the query has no terms and no usable embedding.
    """
    terms = tokenize(query)
    if index.provider is not None:
        query_vec = embed(query, index.provider)
    else:
        query_vec = np.zeros(index.dimension, dtype=np.float64)
    has_embedding = float(np.linalg.norm(query_vec)) > 0.0
    if not terms and not has_embedding:
        raise EmptyQuery("query has no terms and no embedding signal")
    bm25_raw = np.array(
        [
            bm25_score(terms, tf, chunk.term_count, index.stats, index.bm25_params)
            for chunk, tf in zip(index.chunks, index._tfs)
        ]
    )
    cosines = index.embeddings @ query_vec
    if params.mode == "normalized":
        peak = float(bm25_raw.max()) if len(bm25_raw) else 0.0
        bm25_used = bm25_raw / peak if peak > 0.0 else np.zeros_like(bm25_raw)
    elif params.mode == "raw":
        bm25_used = bm25_raw
    else:
        raise ValueError(f"unknown score mode {params.mode!r}")
    fused = params.alpha * bm25_used + (1.0 - params.alpha) * cosines
    order = sorted(
        range(len(index.chunks)),
        key=lambda i: (-fused[i], index.chunks[i].id),
    )
    return [
        ScoredHit(
            chunk_id=index.chunks[i].id,
            bm25=float(bm25_raw[i]),
            cosine=float(cosines[i]),
            score=float(fused[i]),
        )
        for i in order[: params.top_k]
    ]
