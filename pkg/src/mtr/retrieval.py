"""Full-corpus retrievers: Okapi BM25 and dense cosine similarity.

Both produce a :class:`Ranking` over every tool.  Ties break by ascending
tool id, so a ranking depends only on scores and ids, never on corpus order.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import httpx
import numpy as np

from .corpus import CorpusError, ToolCorpus, tokenize

log = logging.getLogger(__name__)

API_KEY_ENV = "MTR_API_KEY"


class RemoteServiceError(RuntimeError):
    """A remote endpoint kept failing after all retries."""


class EmbeddingError(RuntimeError):
    pass


# --- rankings ----------------------------------------------------------------


@dataclass(frozen=True)
class Ranking:
    query: str
    entries: tuple[tuple[str, float], ...]
    _pos: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_pos", {tid: i for i, (tid, _) in enumerate(self.entries)})

    @classmethod
    def from_scores(cls, query: str, ids: Sequence[str], scores: Sequence[float]) -> "Ranking":
        order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
        return cls(query, tuple((ids[i], float(scores[i])) for i in order))

    @property
    def ids(self) -> list[str]:
        return [tid for tid, _ in self.entries]

    def top(self, k: int) -> list[str]:
        return [tid for tid, _ in self.entries[:k]]

    def __len__(self):
        return len(self.entries)


def rank_of(ranking: Ranking, tool_id: str) -> int:
    """1-based position of ``tool_id``."""
    try:
        return ranking._pos[tool_id] + 1
    except KeyError:
        raise KeyError(f"tool id {tool_id!r} not in ranking") from None


# --- BM25 --------------------------------------------------------------------


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be non-negative")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass(frozen=True)
class Bm25Index:
    corpus: ToolCorpus
    params: Bm25Params
    doc_freq: dict[str, int]
    term_freqs: tuple[Counter, ...]
    doc_lens: tuple[int, ...]
    avg_len: float

    def idf(self, term: str) -> float:
        df = self.doc_freq.get(term, 0)
        return math.log((self.corpus.size - df + 0.5) / (df + 0.5) + 1.0)

    def _doc_score(self, pos: int, terms: Sequence[str]) -> float:
        tf_doc = self.term_freqs[pos]
        k1, b = self.params.k1, self.params.b
        norm = k1 * (1.0 - b + b * self.doc_lens[pos] / self.avg_len) if self.avg_len else k1
        score = 0.0
        for t in terms:
            tf = tf_doc.get(t, 0)
            if tf:
                score += self.idf(t) * tf * (k1 + 1.0) / (tf + norm)
        return score

    def scores(self, query: str) -> list[float]:
        terms = tokenize(query)
        return [self._doc_score(i, terms) for i in range(self.corpus.size)]


def build_bm25(corpus: ToolCorpus, params: Bm25Params = Bm25Params()) -> Bm25Index:
    """Index tool descriptions with the same tokenizer as ``token_count``."""
    if corpus.size == 0:
        raise CorpusError("empty corpus")
    term_freqs = tuple(Counter(tokenize(t.description)) for t in corpus)
    doc_freq: Counter = Counter()
    for tf in term_freqs:
        doc_freq.update(tf.keys())
    lens = tuple(sum(tf.values()) for tf in term_freqs)
    return Bm25Index(corpus, params, dict(doc_freq), term_freqs, lens, sum(lens) / len(lens))


def bm25_score(index: Bm25Index, query: str, tool_id: str) -> float:
    """Okapi BM25 of one document; each query token occurrence contributes."""
    if tool_id not in index.corpus:
        raise KeyError(f"unknown tool id {tool_id!r}")
    return index._doc_score(index.corpus.index[tool_id], tokenize(query))


# --- embeddings --------------------------------------------------------------

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    norm: float  # 1.0 once normalised, 0.0 for the zero vector

    @property
    def is_zero(self) -> bool:
        return self.norm == 0.0

    @property
    def dimension(self) -> int:
        return len(self.values)


def normalized(raw) -> EmbeddingVector:
    v = np.asarray(raw, dtype=np.float64)
    n = float(np.sqrt(np.dot(v, v)))
    if n == 0.0 or not math.isfinite(n):
        return EmbeddingVector(np.zeros_like(v), 0.0)
    return EmbeddingVector(v / n, 1.0)


class HashedProvider:
    """Signed feature hashing of the token multiset (FNV-1a 64).

    bucket = hash mod dimension, sign = -1 when the top bit is set.
    """

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.name = f"hashed-{dimension}"

    def raw(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension)
        for tok in tokenize(text):
            h = fnv1a64(tok.encode("utf-8"))
            v[h % self.dimension] += -1.0 if h >> 63 else 1.0
        return v

    def embed(self, text: str, key: str | None = None) -> EmbeddingVector:
        return normalized(self.raw(text))

    def embed_many(self, texts: Sequence[str], keys: Sequence[str] | None = None) -> list[EmbeddingVector]:
        return [self.embed(t) for t in texts]


class FileProvider:
    """Precomputed vectors from ``{"id": str, "vector": [...], "text"?: str}`` lines.

    Lookup is by key (tool id or query id) first, then by exact text when the
    file carries a ``text`` field.
    """

    def __init__(self, by_key: Mapping[str, Sequence[float]], by_text: Mapping[str, Sequence[float]] | None = None,
                 name: str = "file"):
        dims = {len(v) for v in by_key.values()} | {len(v) for v in (by_text or {}).values()}
        if len(dims) != 1:
            raise EmbeddingError(f"inconsistent vector dimensions {sorted(dims)}")
        (self.dimension,) = dims
        self.by_key = dict(by_key)
        self.by_text = dict(by_text or {})
        self.name = name

    @classmethod
    def load(cls, path) -> "FileProvider":
        by_key, by_text = {}, {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.split("\n"), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                vec = [float(x) for x in obj["vector"]]
                by_key[str(obj["id"])] = vec
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise EmbeddingError(f"{path}:{lineno}: bad embedding record ({exc})") from None
            if "text" in obj:
                by_text[obj["text"]] = vec
        if not by_key:
            raise EmbeddingError(f"{path}: no embeddings")
        return cls(by_key, by_text, name=f"file:{Path(path).name}")

    def embed(self, text: str, key: str | None = None) -> EmbeddingVector:
        if key is not None and key in self.by_key:
            return normalized(self.by_key[key])
        if text in self.by_text:
            return normalized(self.by_text[text])
        raise EmbeddingError(f"no precomputed embedding for key={key!r} text={text[:40]!r}")

    def embed_many(self, texts, keys=None):
        keys = keys or [None] * len(texts)
        return [self.embed(t, k) for t, k in zip(texts, keys)]


class RemoteProvider:
    """Embeddings from an HTTP endpoint: POST {"model", "input"} -> {"data": [{"index", "embedding"}]}."""

    def __init__(self, url: str, model: str, dimension: int | None = None, *, api_key: str | None = None,
                 batch_size: int = 64, max_workers: int = 4, attempts: int = 3, backoff: float = 0.5,
                 timeout: float = 30.0, client: httpx.Client | None = None):
        self.url = url
        self.model = model
        self.dimension = dimension
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.batch_size = batch_size
        self.max_workers = max_workers
        self.attempts = attempts
        self.backoff = backoff
        self.client = client or httpx.Client(timeout=timeout)
        self.name = f"remote:{model}"

    def _post(self, texts: list[str]) -> list[list[float]]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last = None
        for attempt in range(self.attempts):
            try:
                resp = self.client.post(self.url, json={"model": self.model, "input": texts}, headers=headers)
                resp.raise_for_status()
                data = sorted(resp.json()["data"], key=lambda d: d["index"])
                if len(data) != len(texts):
                    raise EmbeddingError(f"expected {len(texts)} embeddings, got {len(data)}")
                return [d["embedding"] for d in data]
            except (httpx.HTTPError, KeyError, TypeError, ValueError) as exc:
                last = exc
                log.warning("embedding request failed (attempt %d/%d): %s", attempt + 1, self.attempts, exc)
                if attempt + 1 < self.attempts:
                    time.sleep(self.backoff * 2**attempt)
        raise RemoteServiceError(f"embedding endpoint failed after {self.attempts} attempts: {last}")

    def embed_many(self, texts: Sequence[str], keys=None) -> list[EmbeddingVector]:
        batches = [list(texts[i : i + self.batch_size]) for i in range(0, len(texts), self.batch_size)]
        with ThreadPoolExecutor(max_workers=max(1, self.max_workers)) as pool:
            results = list(pool.map(self._post, batches))
        vectors = [normalized(v) for batch in results for v in batch]
        for v in vectors:
            if self.dimension is None:
                self.dimension = v.dimension
            elif v.dimension != self.dimension:
                raise EmbeddingError(f"dimension mismatch: {v.dimension} != {self.dimension}")
        return vectors

    def embed(self, text: str, key: str | None = None) -> EmbeddingVector:
        return self.embed_many([text])[0]


def embed(provider, text: str, key: str | None = None) -> EmbeddingVector:
    return provider.embed(text, key)


@dataclass(frozen=True)
class DenseIndex:
    corpus: ToolCorpus
    provider: object
    matrix: np.ndarray  # (M, dim), unit rows or zero rows

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def scores(self, query: str, key: str | None = None) -> np.ndarray:
        q = self.provider.embed(query, key)
        if q.dimension != self.dimension:
            raise EmbeddingError(f"query dimension {q.dimension} != index dimension {self.dimension}")
        if q.is_zero:
            return np.zeros(self.corpus.size)
        # row-wise reduction keeps each tool's score independent of its row position
        return (self.matrix * q.values).sum(axis=1)


def build_dense(corpus: ToolCorpus, provider) -> DenseIndex:
    vectors = provider.embed_many([t.description for t in corpus], [t.id for t in corpus])
    dims = {v.dimension for v in vectors}
    if len(dims) != 1:
        raise EmbeddingError(f"inconsistent tool vector dimensions {sorted(dims)}")
    return DenseIndex(corpus, provider, np.vstack([v.values for v in vectors]))


def cosine(u: EmbeddingVector, v: EmbeddingVector) -> float:
    if u.is_zero or v.is_zero:
        return 0.0
    return float(np.dot(u.values, v.values))


def rank_full(retriever, query: str, key: str | None = None) -> Ranking:
    """Rank every tool in the retriever's corpus for ``query``."""
    ids = retriever.corpus.ids
    if isinstance(retriever, DenseIndex):
        scores = retriever.scores(query, key).tolist()
    else:
        scores = retriever.scores(query)
    return Ranking.from_scores(query, ids, scores)
