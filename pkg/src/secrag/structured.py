"""The seven parallel structured retrievers and three-zone context assembly.

Each retriever gates hits on its own similarity threshold (the engine-wide
defaults live in DEFAULT_RETRIEVER_CONFIGS) and the merged context is laid out
in three zones: exploit code first, question-system matches in the middle,
short contextual records (mitre/cwe/entity/malware) at the end. Within the
question system, matched parents are reordered so the strongest evidence sits
at the edges of the context and the weakest in the middle.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FuturesTimeoutError
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .backends import Backend, BackendError, embed
from .index import ScoredDocument, dense_top_k, tfidf_search
from .ingestion import KnowledgeBase
from .query import RefinedQuery

logger = logging.getLogger(__name__)

RETRIEVER_IDS = (
    "malware",
    "metasploit",
    "exploitdb",
    "cwe",
    "mitre",
    "entity",
    "question",
)

CODE_ZONE_ORDER = ("metasploit", "exploitdb")
INFO_ZONE_ORDER = ("mitre", "cwe", "entity", "malware")


class StructuredStageError(Exception):
    """All seven retrievers failed (distinct from all-empty, which is valid)."""


@dataclass(frozen=True)
class RetrieverConfig:
    retriever_id: str
    mode: str  # dense | lexical | hybrid | question_system
    threshold: Optional[float]
    top_k: int
    embedder_backend: str = ""
    kb_partition: str = ""

    def __post_init__(self) -> None:
        if self.mode in ("dense", "hybrid", "question_system"):
            if self.threshold is None or not (0.0 <= self.threshold <= 1.0):
                raise ValueError(
                    f"{self.retriever_id}: {self.mode} mode needs a threshold in [0,1]"
                )
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


def default_retriever_configs() -> dict[str, RetrieverConfig]:
    """Engine defaults: per-retriever thresholds, embedders, and doc counts."""
    return {
        "malware": RetrieverConfig("malware", "dense", 0.70, 5, "alpha", "malware"),
        "metasploit": RetrieverConfig("metasploit", "hybrid", 0.75, 5, "alpha", "metasploit"),
        "exploitdb": RetrieverConfig("exploitdb", "lexical", None, 5, "", "exploitdb"),
        "cwe": RetrieverConfig("cwe", "dense", 0.73, 10, "alpha", "cwe"),
        "mitre": RetrieverConfig("mitre", "dense", 0.70, 5, "alpha", "mitre"),
        "entity": RetrieverConfig("entity", "dense", 0.50, 5, "beta", "entity"),
        "question": RetrieverConfig("question", "question_system", 0.60, 10, "beta", "question"),
    }


@dataclass
class ContextBundle:
    code_zone: list[ScoredDocument] = field(default_factory=list)
    question_zone: list[ScoredDocument] = field(default_factory=list)
    info_zone: list[ScoredDocument] = field(default_factory=list)
    source_path: str = "none"  # structured | unstructured | none

    def __post_init__(self) -> None:
        ids = [d.chunk_id for d in self.flattened()]
        if len(ids) != len(set(ids)):
            raise ValueError("bundle zones must hold disjoint chunk ids")

    def flattened(self) -> list[ScoredDocument]:
        return [*self.code_zone, *self.question_zone, *self.info_zone]

    def total(self) -> int:
        return len(self.code_zone) + len(self.question_zone) + len(self.info_zone)

    @property
    def is_empty(self) -> bool:
        return self.total() == 0


@dataclass(frozen=True)
class RetrieverDiagnostics:
    retriever_id: str
    hits: int
    elapsed_ms: float
    error: Optional[str] = None


def _merge_max(hit_lists: Sequence[Sequence[ScoredDocument]], retriever_id: str) -> list[ScoredDocument]:
    best: dict[str, float] = {}
    for hits in hit_lists:
        for doc in hits:
            if doc.chunk_id not in best or doc.score > best[doc.chunk_id]:
                best[doc.chunk_id] = doc.score
    ranked = sorted(best.items(), key=lambda p: (-p[1], p[0]))
    return [ScoredDocument(cid, score, retriever_id) for cid, score in ranked]


def structured_retrieve(
    cfg: RetrieverConfig,
    query: RefinedQuery,
    kb: KnowledgeBase,
    embedder: Backend,
) -> list[ScoredDocument]:
    """Dense retrieval over one partition: every expanded sub-query runs
    against the index, hits are unioned keeping each chunk's best score."""
    index = kb.dense_indexes.get(cfg.kb_partition)
    if index is None or len(index) == 0:
        return []
    vectors = embed(embedder, list(query.expanded))
    per_query = [
        dense_top_k(index, v, k=cfg.top_k, threshold=cfg.threshold, retriever_id=cfg.retriever_id)
        for v in vectors
    ]
    return _merge_max(per_query, cfg.retriever_id)


def metasploit_retrieve(
    query: RefinedQuery,
    kb: KnowledgeBase,
    embedder: Backend,
    cfg: Optional[RetrieverConfig] = None,
) -> list[ScoredDocument]:
    """Hybrid: dense hits (threshold 0.75) ranked ahead of lexical-only hits."""
    cfg = cfg or default_retriever_configs()["metasploit"]
    dense_hits = structured_retrieve(cfg, query, kb, embedder)
    lexical_hits: list[ScoredDocument] = []
    lexical = kb.lexical_indexes.get(cfg.kb_partition)
    if lexical is not None:
        lexical_hits = tfidf_search(
            lexical, query.substituted, k=cfg.top_k, retriever_id=cfg.retriever_id
        )
    seen = {d.chunk_id for d in dense_hits}
    merged = list(dense_hits)
    merged.extend(d for d in lexical_hits if d.chunk_id not in seen)
    return merged


def exploitdb_retrieve(
    query: RefinedQuery,
    kb: KnowledgeBase,
    cfg: Optional[RetrieverConfig] = None,
) -> list[ScoredDocument]:
    """Keyword-only retrieval over the 600-character script prefixes."""
    cfg = cfg or default_retriever_configs()["exploitdb"]
    lexical = kb.lexical_indexes.get(cfg.kb_partition)
    if lexical is None:
        return []
    return tfidf_search(
        lexical, query.substituted, k=cfg.top_k, retriever_id=cfg.retriever_id
    )


def question_system_retrieve(
    query: RefinedQuery,
    kb: KnowledgeBase,
    embedder: Backend,
    cfg: Optional[RetrieverConfig] = None,
) -> list[ScoredDocument]:
    """Four question shards in sequence, ten matches each, mapped to parents.

    Redundant questions pointing at the same parent collapse to the parent's
    best score, and parents are reordered edge-first before returning.
    """
    cfg = cfg or default_retriever_configs()["question"]
    shard_ids = sorted(
        rid
        for rid in kb.dense_indexes
        if rid == cfg.kb_partition or rid.startswith(cfg.kb_partition + "/")
    )
    if not shard_ids:
        return []
    vectors = embed(embedder, list(query.expanded))
    question_hits: list[list[ScoredDocument]] = []
    for shard_id in shard_ids:
        index = kb.dense_indexes[shard_id]
        if len(index) == 0:
            continue
        for v in vectors:
            question_hits.append(
                dense_top_k(index, v, k=cfg.top_k, retriever_id=cfg.retriever_id)
            )
    merged = _merge_max(question_hits, cfg.retriever_id)
    surviving = [d for d in merged if cfg.threshold is None or d.score >= cfg.threshold]
    parents: dict[str, float] = {}
    for doc in surviving:
        parent_id = kb.chunk(doc.chunk_id).metadata["parent_chunk_id"]
        if parent_id not in parents or doc.score > parents[parent_id]:
            parents[parent_id] = doc.score
    parent_docs = [
        ScoredDocument(pid, score, cfg.retriever_id) for pid, score in parents.items()
    ]
    return lost_in_middle_reorder(parent_docs)


def lost_in_middle_reorder(docs: Sequence[ScoredDocument]) -> list[ScoredDocument]:
    """Best first, second-best last, weakest in the middle.

    With r1 the best of n ranked docs the output is [r1, r3, r5, ...] followed
    by [..., r6, r4, r2].
    """
    ranked = sorted(docs, key=lambda d: (-d.score, d.chunk_id))
    return ranked[0::2] + ranked[1::2][::-1]


def run_structured(
    query: RefinedQuery,
    kb: KnowledgeBase,
    configs: Mapping[str, RetrieverConfig],
    embedders: Mapping[str, Backend],
    timeout_s: Optional[float] = 10.0,
) -> tuple[ContextBundle, list[RetrieverDiagnostics]]:
    """All seven retrievers concurrently; assembly order is fixed regardless
    of completion order, so output is deterministic. Retrievers still running
    at the stage deadline contribute nothing and are flagged in diagnostics."""

    def run_one(rid: str) -> list[ScoredDocument]:
        cfg = configs[rid]
        embedder = embedders.get(cfg.embedder_backend)
        if rid == "metasploit":
            return metasploit_retrieve(query, kb, embedder, cfg)
        if rid == "exploitdb":
            return exploitdb_retrieve(query, kb, cfg)
        if rid == "question":
            return question_system_retrieve(query, kb, embedder, cfg)
        return structured_retrieve(cfg, query, kb, embedder)

    deadline = None if timeout_s is None else time.monotonic() + timeout_s
    results: dict[str, list[ScoredDocument]] = {}
    diagnostics: list[RetrieverDiagnostics] = []
    errors = 0
    with ThreadPoolExecutor(max_workers=len(RETRIEVER_IDS)) as pool:
        started = {rid: (time.perf_counter(), pool.submit(run_one, rid)) for rid in RETRIEVER_IDS}
        for rid in RETRIEVER_IDS:
            t0, future = started[rid]
            try:
                budget = None if deadline is None else max(0.0, deadline - time.monotonic())
                hits = future.result(timeout=budget)
                results[rid] = hits
                diagnostics.append(
                    RetrieverDiagnostics(rid, len(hits), (time.perf_counter() - t0) * 1000)
                )
            except FuturesTimeoutError:
                errors += 1
                future.cancel()
                logger.warning("retriever %s exceeded the stage budget", rid)
                results[rid] = []
                diagnostics.append(
                    RetrieverDiagnostics(
                        rid, 0, (time.perf_counter() - t0) * 1000, "stage timeout"
                    )
                )
            except (BackendError, ValueError) as exc:
                errors += 1
                logger.warning("retriever %s failed: %s", rid, exc)
                results[rid] = []
                diagnostics.append(
                    RetrieverDiagnostics(rid, 0, (time.perf_counter() - t0) * 1000, str(exc))
                )
    if errors == len(RETRIEVER_IDS):
        raise StructuredStageError("every structured retriever failed")

    seen: set[str] = set()

    def take(rids: Sequence[str]) -> list[ScoredDocument]:
        zone = []
        for rid in rids:
            for doc in results[rid]:
                if doc.chunk_id not in seen:
                    seen.add(doc.chunk_id)
                    zone.append(doc)
        return zone

    code = take(CODE_ZONE_ORDER)
    question = take(("question",))
    info = take(INFO_ZONE_ORDER)
    bundle = ContextBundle(
        code_zone=code,
        question_zone=question,
        info_zone=info,
        source_path="structured" if (code or question or info) else "none",
    )
    return bundle, diagnostics
