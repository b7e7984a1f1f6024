"""Fallback retrieval: hybrid buffers plus the context transformation pipeline.

Buffers are hybrid retrievers (dense + BM25) over raw 2000-character chunks
that always return their top five hits regardless of similarity; relevance
gating happens afterwards, inside the four-stage transformation:
split into 300-character pieces, drop redundant pieces, keep pieces
sufficiently close to the query, then reorder edge-first.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FuturesTimeoutError
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .backends import Backend, BackendError, embed
from .index import ScoredDocument, bm25_search, cosine_similarity, dense_top_k
from .ingestion import KnowledgeBase, chunk_fixed
from .query import RefinedQuery
from .structured import ContextBundle, RetrieverDiagnostics, lost_in_middle_reorder

logger = logging.getLogger(__name__)

BUFFER_FAMILIES = ("text", "metasploit", "code", "paper")
DEFAULT_FAMILY_COUNTS = {"text": 5, "metasploit": 5, "code": 1, "paper": 3}
DEFAULT_FAMILY_EMBEDDERS = {
    "text": "alpha",
    "metasploit": "alpha",
    "code": "alpha",
    "paper": "beta",
}

_PIECE_MARKER = "#c"


class UnstructuredStageError(Exception):
    """Every configured buffer failed outright."""


@dataclass(frozen=True)
class BufferConfig:
    buffer_id: str
    family: str
    embedder_backend: str
    chunk_size_chars: int = 2000
    top_k: int = 5
    kb_partition: str = ""

    def __post_init__(self) -> None:
        if self.family not in BUFFER_FAMILIES:
            raise ValueError(f"unknown buffer family {self.family!r}")
        if not self.kb_partition:
            object.__setattr__(self, "kb_partition", self.buffer_id)


@dataclass(frozen=True)
class TransformConfig:
    split_chars: int = 300
    redundancy_threshold: float = 0.95
    relevance_threshold: float = 0.6
    embedder_backend: str = "beta"

    def __post_init__(self) -> None:
        if not (0.0 < self.redundancy_threshold <= 1.0):
            raise ValueError("redundancy_threshold must be in (0, 1]")


def default_buffer_configs(
    family_counts: Optional[Mapping[str, int]] = None,
) -> list[BufferConfig]:
    counts = dict(DEFAULT_FAMILY_COUNTS)
    if family_counts:
        counts.update(family_counts)
    configs = []
    for family in BUFFER_FAMILIES:
        for i in range(counts.get(family, 0)):
            configs.append(
                BufferConfig(
                    buffer_id=f"buffer/{family}/{i}",
                    family=family,
                    embedder_backend=DEFAULT_FAMILY_EMBEDDERS[family],
                )
            )
    return configs


def piece_id(parent_id: str, start: int, end: int) -> str:
    return f"{parent_id}{_PIECE_MARKER}{start}-{end}"


def resolve_text(kb: KnowledgeBase, doc_id: str) -> str:
    """Chunk text, or the slice of the parent chunk a piece id points at."""
    if _PIECE_MARKER in doc_id:
        parent_id, _, span = doc_id.rpartition(_PIECE_MARKER)
        start, _, end = span.partition("-")
        return kb.chunk(parent_id).text[int(start) : int(end)]
    return kb.chunk(doc_id).text


def _buffer_retrieve_full(
    cfg: BufferConfig,
    query: RefinedQuery,
    kb: KnowledgeBase,
    embedder: Backend,
) -> tuple[list[ScoredDocument], bool]:
    """Hybrid retrieval; returns (hits, degraded_to_lexical_only)."""
    dense_hits: list[ScoredDocument] = []
    degraded = False
    index = kb.dense_indexes.get(cfg.kb_partition)
    if index is not None and len(index) > 0:
        try:
            (qvec,) = embed(embedder, [query.substituted])
            dense_hits = dense_top_k(
                index, qvec, k=cfg.top_k, retriever_id=cfg.buffer_id
            )
        except (BackendError, ValueError) as exc:
            degraded = True
            logger.warning("buffer %s dense arm degraded: %s", cfg.buffer_id, exc)
    lexical_hits: list[ScoredDocument] = []
    lexical = kb.lexical_indexes.get(cfg.kb_partition)
    if lexical is not None:
        lexical_hits = bm25_search(
            lexical, query.substituted, k=cfg.top_k, retriever_id=cfg.buffer_id
        )
    seen = {d.chunk_id for d in dense_hits}
    merged = list(dense_hits)
    merged.extend(d for d in lexical_hits if d.chunk_id not in seen)
    return merged, degraded


def buffer_retrieve(
    cfg: BufferConfig,
    query: RefinedQuery,
    kb: KnowledgeBase,
    embedder: Backend,
) -> list[ScoredDocument]:
    """Dense top-5 (no threshold) unioned with BM25 top-5; at most 10 docs."""
    hits, _ = _buffer_retrieve_full(cfg, query, kb, embedder)
    return hits


def context_transform(
    docs: Sequence[ScoredDocument],
    query: RefinedQuery,
    cfg: TransformConfig,
    kb: KnowledgeBase,
    embedder: Backend,
    stage_log: Optional[list[str]] = None,
) -> list[ScoredDocument]:
    """split -> dedup -> filter -> reorder, in that fixed order."""

    def log(stage: str) -> None:
        if stage_log is not None:
            stage_log.append(stage)

    if not docs:
        for stage in ("split", "dedup", "filter", "reorder"):
            log(stage)
        return []

    # stage 1: split each doc into fixed-size pieces, carrying the doc score
    ranked_docs = sorted(docs, key=lambda d: (-d.score, d.chunk_id))
    pieces: list[tuple[str, str, float, str]] = []  # (id, text, score, retriever)
    for doc in ranked_docs:
        text = resolve_text(kb, doc.chunk_id)
        offset = 0
        for part in chunk_fixed(text, cfg.split_chars):
            pid = piece_id(doc.chunk_id, offset, offset + len(part))
            pieces.append((pid, part, doc.score, doc.retriever_id))
            offset += len(part)
    log("split")

    # one embedding batch serves both the redundancy and the relevance stage
    vectors = embed(embedder, [query.substituted] + [p[1] for p in pieces])
    query_vec, piece_vecs = vectors[0], vectors[1:]

    # stage 2: greedy scan in score order, dropping near-duplicates of kept pieces
    kept: list[int] = []
    for i in range(len(pieces)):
        if all(
            cosine_similarity(piece_vecs[i], piece_vecs[j]) < cfg.redundancy_threshold
            for j in kept
        ):
            kept.append(i)
    log("dedup")

    # stage 3: relevance gate against the query; survivors re-scored by it
    survivors = []
    for i in kept:
        relevance = cosine_similarity(piece_vecs[i], query_vec)
        if relevance >= cfg.relevance_threshold:
            pid, _, _, retriever_id = pieces[i]
            survivors.append(ScoredDocument(pid, relevance, retriever_id))
    log("filter")

    reordered = lost_in_middle_reorder(survivors)
    log("reorder")
    return reordered


def run_unstructured(
    query: RefinedQuery,
    kb: KnowledgeBase,
    buffer_cfgs: Sequence[BufferConfig],
    transform_cfg: TransformConfig,
    embedders: Mapping[str, Backend],
    timeout_s: Optional[float] = 60.0,
) -> tuple[ContextBundle, list[RetrieverDiagnostics]]:
    """All buffers concurrently, concatenated, then transformed into one zone."""
    if not buffer_cfgs:
        raise ValueError("at least one buffer must be configured")

    def run_one(cfg: BufferConfig) -> tuple[list[ScoredDocument], bool]:
        return _buffer_retrieve_full(cfg, query, kb, embedders.get(cfg.embedder_backend))

    deadline = None if timeout_s is None else time.monotonic() + timeout_s
    collected: list[ScoredDocument] = []
    diagnostics: list[RetrieverDiagnostics] = []
    failures = 0
    with ThreadPoolExecutor(max_workers=min(8, len(buffer_cfgs))) as pool:
        started = [(cfg, time.perf_counter(), pool.submit(run_one, cfg)) for cfg in buffer_cfgs]
        for cfg, t0, future in started:
            try:
                budget = None if deadline is None else max(0.0, deadline - time.monotonic())
                hits, degraded = future.result(timeout=budget)
                collected.extend(hits)
                diagnostics.append(
                    RetrieverDiagnostics(
                        cfg.buffer_id,
                        len(hits),
                        (time.perf_counter() - t0) * 1000,
                        "degraded to lexical-only" if degraded else None,
                    )
                )
            except FuturesTimeoutError:
                failures += 1
                future.cancel()
                logger.warning("buffer %s exceeded the stage budget", cfg.buffer_id)
                diagnostics.append(
                    RetrieverDiagnostics(
                        cfg.buffer_id, 0, (time.perf_counter() - t0) * 1000, "stage timeout"
                    )
                )
            except Exception as exc:
                failures += 1
                logger.warning("buffer %s failed: %s", cfg.buffer_id, exc)
                diagnostics.append(
                    RetrieverDiagnostics(
                        cfg.buffer_id, 0, (time.perf_counter() - t0) * 1000, str(exc)
                    )
                )
    if failures == len(buffer_cfgs):
        raise UnstructuredStageError("every buffer failed")

    transformed = context_transform(
        collected, query, transform_cfg, kb, embedders.get(transform_cfg.embedder_backend)
    )
    bundle = ContextBundle(
        info_zone=transformed,
        source_path="unstructured" if transformed else "none",
    )
    return bundle, diagnostics
