"""Embedding-space and lexical retrieval primitives.

Cosine similarity over dense vectors, exhaustive thresholded top-k search,
and TF-IDF / BM25 inverted indexes. Every retriever in the engine is built
on this module; corpora are small enough (order 10k documents) that an
exact brute-force scan beats any approximate structure.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Iterable, Optional, Sequence

import numpy as np

VEC_MAGIC = b"MRSE"
VEC_VERSION = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")


class SourceKind(str, Enum):
    MITRE = "mitre"
    METASPLOIT = "metasploit"
    EXPLOITDB = "exploitdb"
    CWE = "cwe"
    MALWARE = "malware"
    PAPER = "paper"
    WEB = "web"
    QUESTION = "question"
    ENTITY = "entity"


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """A finite, fixed-dimension real vector (stored as float32)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding contains non-finite values")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values.astype(np.float64)))

    @property
    def is_normalized(self) -> bool:
        return abs(self.norm - 1.0) <= 1e-6

    def normalized(self) -> "EmbeddingVector":
        n = self.norm
        if n == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return EmbeddingVector(self.values / np.float32(n))

    def tolist(self) -> list[float]:
        return [float(x) for x in self.values]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __repr__(self) -> str:  # keep test failure output readable
        return f"EmbeddingVector(dim={self.dim})"


@dataclass(frozen=True)
class DocumentChunk:
    """A unit of retrievable text with provenance metadata."""

    id: str
    source_kind: SourceKind
    text: str
    metadata: dict[str, str] = field(default_factory=dict)
    embedding: Optional[EmbeddingVector] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("chunk id must be non-empty")
        if not self.text:
            raise ValueError(f"chunk {self.id!r} has empty text")
        if self.source_kind is SourceKind.QUESTION and "parent_chunk_id" not in self.metadata:
            raise ValueError(f"question chunk {self.id!r} lacks parent_chunk_id")


@dataclass(frozen=True)
class ScoredDocument:
    """A chunk id paired with the score and retriever that produced it."""

    chunk_id: str
    score: float
    retriever_id: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score for chunk {self.chunk_id!r}")


class DenseIndex:
    """Immutable exhaustive-scan cosine index over embedded chunks."""

    def __init__(
        self,
        entries: Iterable[tuple[str, EmbeddingVector]],
        embedding_backend_id: str = "",
    ) -> None:
        ids: list[str] = []
        rows: list[np.ndarray] = []
        dim: Optional[int] = None
        for chunk_id, vec in entries:
            if dim is None:
                dim = vec.dim
            elif vec.dim != dim:
                raise ValueError(
                    f"dimension mismatch in index: got {vec.dim}, expected {dim}"
                )
            if not np.any(vec.values):
                raise ValueError(f"zero-vector embedding for chunk {chunk_id!r}")
            ids.append(chunk_id)
            rows.append(vec.values)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate chunk ids in dense index")
        self._ids: tuple[str, ...] = tuple(ids)
        self._dim = dim or 0
        self._matrix = (
            np.vstack(rows).astype(np.float32)
            if rows
            else np.zeros((0, self._dim), dtype=np.float32)
        )
        self._norms = np.linalg.norm(self._matrix.astype(np.float64), axis=1)
        self.embedding_backend_id = embedding_backend_id

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def __len__(self) -> int:
        return len(self._ids)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DenseIndex):
            return NotImplemented
        return (
            self._ids == other._ids
            and self.embedding_backend_id == other.embedding_backend_id
            and np.array_equal(self._matrix, other._matrix)
        )

    def __repr__(self) -> str:
        return f"DenseIndex(n={len(self)}, dim={self._dim}, backend={self.embedding_backend_id!r})"


@dataclass
class LexicalIndex:
    """Inverted index scored with either TF-IDF or Okapi BM25."""

    kind: str  # "tfidf" | "bm25"
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    n_docs: int
    bm25_k1: float = 1.5
    bm25_b: float = 0.75

    def __post_init__(self) -> None:
        if self.kind not in ("tfidf", "bm25"):
            raise ValueError(f"unknown lexical index kind {self.kind!r}")
        if self.n_docs != len(self.doc_lengths):
            raise ValueError("n_docs does not match doc_lengths")
        if self.bm25_k1 <= 0 or not (0.0 <= self.bm25_b <= 1.0):
            raise ValueError("bm25 parameters out of range")


def tokenize(text: str) -> list[str]:
    """Lowercase tokens; hyphenated identifiers like cve-2017-5162 stay whole."""
    return _TOKEN_RE.findall(text.lower())


def build_lexical_index(
    docs: Iterable[tuple[str, str]],
    kind: str = "tfidf",
    k1: float = 1.5,
    b: float = 0.75,
) -> LexicalIndex:
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for chunk_id, text in docs:
        if chunk_id in doc_lengths:
            raise ValueError(f"duplicate doc id {chunk_id!r}")
        tokens = tokenize(text)
        doc_lengths[chunk_id] = len(tokens)
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for tok, tf in counts.items():
            postings.setdefault(tok, []).append((chunk_id, tf))
    return LexicalIndex(
        kind=kind,
        postings=postings,
        doc_lengths=doc_lengths,
        n_docs=len(doc_lengths),
        bm25_k1=k1,
        bm25_b=b,
    )


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two embeddings, in [-1, 1] up to rounding."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    av = a.values.astype(np.float64)
    bv = b.values.astype(np.float64)
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vector")
    return float(np.dot(av, bv) / (na * nb))


def _ranked(pairs: Iterable[tuple[str, float]]) -> list[tuple[str, float]]:
    # Descending score; equal scores fall back to ascending chunk id.
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


def dense_top_k(
    index: DenseIndex,
    query: EmbeddingVector,
    k: int,
    threshold: Optional[float] = None,
    retriever_id: str = "",
) -> list[ScoredDocument]:
    """Exhaustive cosine scan; at most k hits, optionally gated by threshold."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        return []
    if query.dim != index.dim:
        raise ValueError(f"dimension mismatch: query {query.dim} vs index {index.dim}")
    qv = query.values.astype(np.float64)
    qnorm = np.linalg.norm(qv)
    if qnorm == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm query")
    scores = (index.matrix.astype(np.float64) @ qv) / (index._norms * qnorm)
    pairs = list(zip(index.ids, (float(s) for s in scores)))
    if threshold is not None:
        pairs = [(cid, s) for cid, s in pairs if s >= threshold]
    return [
        ScoredDocument(cid, s, retriever_id) for cid, s in _ranked(pairs)[:k]
    ]


def tfidf_search(
    index: LexicalIndex,
    query_text: str,
    k: int,
    retriever_id: str = "",
) -> list[ScoredDocument]:
    """score(d) = sum over query tokens of tf(t,d) * ln(n_docs / df(t))."""
    if index.kind != "tfidf":
        raise ValueError(f"tfidf_search requires a tfidf index, got {index.kind!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    scores: dict[str, float] = {}
    for tok in tokenize(query_text):
        posting = index.postings.get(tok)
        if not posting:
            continue
        idf = math.log(index.n_docs / len(posting))
        for chunk_id, tf in posting:
            scores[chunk_id] = scores.get(chunk_id, 0.0) + tf * idf
    pairs = [(cid, s) for cid, s in scores.items() if s > 0.0]
    return [ScoredDocument(cid, s, retriever_id) for cid, s in _ranked(pairs)[:k]]


def bm25_search(
    index: LexicalIndex,
    query_text: str,
    k: int,
    retriever_id: str = "",
) -> list[ScoredDocument]:
    """Okapi BM25 with idf(t) = ln(1 + (n - df + 0.5) / (df + 0.5))."""
    if index.kind != "bm25":
        raise ValueError(f"bm25_search requires a bm25 index, got {index.kind!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if index.n_docs == 0:
        return []
    avgdl = sum(index.doc_lengths.values()) / index.n_docs
    k1, b = index.bm25_k1, index.bm25_b
    scores: dict[str, float] = {}
    for tok in tokenize(query_text):
        posting = index.postings.get(tok)
        if not posting:
            continue
        df = len(posting)
        idf = math.log(1.0 + (index.n_docs - df + 0.5) / (df + 0.5))
        for chunk_id, tf in posting:
            dl = index.doc_lengths[chunk_id]
            denom = tf + k1 * (1.0 - b + b * dl / avgdl)
            scores[chunk_id] = scores.get(chunk_id, 0.0) + idf * tf * (k1 + 1.0) / denom
    pairs = [(cid, s) for cid, s in scores.items() if s > 0.0]
    return [ScoredDocument(cid, s, retriever_id) for cid, s in _ranked(pairs)[:k]]


def write_vec(fh: BinaryIO, index: DenseIndex) -> None:
    """Sidecar binary format: magic, u32 version, u32 dim, u64 count, f32le data."""
    fh.write(struct.pack("<4sIIQ", VEC_MAGIC, VEC_VERSION, index.dim, len(index)))
    fh.write(index.matrix.astype("<f4").tobytes(order="C"))


def read_vec(fh: BinaryIO, ids: Sequence[str], embedding_backend_id: str = "") -> DenseIndex:
    header = fh.read(struct.calcsize("<4sIIQ"))
    if len(header) < struct.calcsize("<4sIIQ"):
        raise ValueError("truncated .vec header")
    magic, version, dim, count = struct.unpack("<4sIIQ", header)
    if magic != VEC_MAGIC:
        raise ValueError(f"bad .vec magic {magic!r}")
    if version != VEC_VERSION:
        raise ValueError(f"unsupported .vec version {version}, expected {VEC_VERSION}")
    if count != len(ids):
        raise ValueError(f".vec holds {count} vectors but manifest lists {len(ids)}")
    raw = fh.read(4 * dim * count)
    if len(raw) != 4 * dim * count:
        raise ValueError("truncated .vec payload")
    matrix = np.frombuffer(raw, dtype="<f4").reshape(count, dim)
    entries = [(cid, EmbeddingVector(matrix[i])) for i, cid in enumerate(ids)]
    return DenseIndex(entries, embedding_backend_id=embedding_backend_id)
