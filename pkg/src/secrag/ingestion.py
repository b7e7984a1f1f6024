"""Knowledge base construction and persistence.

A knowledge base is a set of chunks plus per-partition dense and lexical
indexes. Chunk ids are derived from a content hash of the source document and
the chunk ordinal, so re-ingesting identical sources rebuilds an identical KB.

On-disk layout (one directory per KB):
    manifest.json   kb_id, format version, counts, index descriptors
    chunks.jsonl    all non-question chunks, one JSON object per line
    questions.jsonl generated question chunks
    entities.jsonl  entity records
    *.vec           binary embedding sidecars, one per dense index
Lexical indexes are rebuilt from the manifest descriptors at load time.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .backends import (
    Backend,
    BackendError,
    embed,
    extract_entities_backend,
    generate_answer,
    generate_questions,
)
from .index import (
    DenseIndex,
    DocumentChunk,
    EmbeddingVector,
    LexicalIndex,
    SourceKind,
    build_lexical_index,
    read_vec,
    write_vec,
)

logger = logging.getLogger(__name__)

KB_MANIFEST_VERSION = 1
PARTITION_KEY = "partition"
QUESTIONS_PER_CHUNK = 7
QUESTION_SHARDS = 4
EXPLOITDB_PREFIX_CHARS = 600

_ENTITY_DESCRIPTION_PROMPT = "Describe {name} using this context:\n{context}"


class KnowledgeBaseError(Exception):
    pass


@dataclass(frozen=True)
class EntityRecord:
    entity_name: str
    description: str
    source_chunk_id: str

    def __post_init__(self) -> None:
        if not self.description:
            raise ValueError(f"entity {self.entity_name!r} has empty description")


@dataclass(frozen=True)
class LexicalSpec:
    """Recipe for rebuilding a lexical index from chunk text at load time."""

    retriever_id: str
    kind: str
    partition: str
    prefix_chars: Optional[int] = None
    k1: float = 1.5
    b: float = 0.75


@dataclass
class KnowledgeBase:
    kb_id: str
    chunks: list[DocumentChunk] = field(default_factory=list)
    dense_indexes: dict[str, DenseIndex] = field(default_factory=dict)
    lexical_indexes: dict[str, LexicalIndex] = field(default_factory=dict)
    lexical_specs: dict[str, LexicalSpec] = field(default_factory=dict)
    entities: list[EntityRecord] = field(default_factory=list)
    manifest_version: int = KB_MANIFEST_VERSION

    def __post_init__(self) -> None:
        self._by_id = {c.id: c for c in self.chunks}
        if len(self._by_id) != len(self.chunks):
            raise KnowledgeBaseError(f"duplicate chunk ids in KB {self.kb_id!r}")

    def chunk(self, chunk_id: str) -> DocumentChunk:
        try:
            return self._by_id[chunk_id]
        except KeyError:
            raise KnowledgeBaseError(f"unknown chunk id {chunk_id!r}") from None

    def has_chunk(self, chunk_id: str) -> bool:
        return chunk_id in self._by_id

    def partition_chunks(self, partition_id: str) -> list[DocumentChunk]:
        return [c for c in self.chunks if c.metadata.get(PARTITION_KEY) == partition_id]

    def partitions(self) -> set[str]:
        return {c.metadata[PARTITION_KEY] for c in self.chunks if PARTITION_KEY in c.metadata}

    def validate(self) -> None:
        for rid, idx in self.dense_indexes.items():
            for cid in idx.ids:
                if cid not in self._by_id:
                    raise KnowledgeBaseError(
                        f"dense index {rid!r} references missing chunk {cid!r}"
                    )
        for rid, idx in self.lexical_indexes.items():
            for cid in idx.doc_lengths:
                if cid not in self._by_id:
                    raise KnowledgeBaseError(
                        f"lexical index {rid!r} references missing chunk {cid!r}"
                    )
        for rec in self.entities:
            if rec.source_chunk_id not in self._by_id:
                raise KnowledgeBaseError(
                    f"entity {rec.entity_name!r} references missing chunk"
                )
        for chunk in self.chunks:
            if chunk.source_kind is SourceKind.QUESTION:
                parent = chunk.metadata["parent_chunk_id"]
                if parent not in self._by_id:
                    raise KnowledgeBaseError(
                        f"question chunk {chunk.id!r} has missing parent {parent!r}"
                    )

    def __eq__(self, other: object) -> bool:
        # a KB is a set of chunks plus indexes; chunk file ordering is not identity
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return (
            self.kb_id == other.kb_id
            and self.manifest_version == other.manifest_version
            and self._by_id == other._by_id
            and self.dense_indexes == other.dense_indexes
            and self.lexical_indexes == other.lexical_indexes
            and sorted(self.entities, key=lambda e: (e.entity_name, e.source_chunk_id))
            == sorted(other.entities, key=lambda e: (e.entity_name, e.source_chunk_id))
        )


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------


def chunk_fixed(text: str, size_chars: int) -> list[str]:
    """Exact character partition: joining the chunks reproduces the input."""
    if size_chars < 1:
        raise ValueError("size_chars must be >= 1")
    return [text[i : i + size_chars] for i in range(0, len(text), size_chars)]


def chunk_words(text: str, size_words: int) -> list[str]:
    """Whitespace-token partition preserving word order."""
    if size_words < 1:
        raise ValueError("size_words must be >= 1")
    words = text.split()
    return [
        " ".join(words[i : i + size_words]) for i in range(0, len(words), size_words)
    ]


def source_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def make_chunks(
    source_text: str,
    size_chars: int,
    source_kind: SourceKind,
    partition: str,
    origin_path: str = "",
    overlap_chars: int = 0,
    extra_metadata: Optional[dict[str, str]] = None,
) -> list[DocumentChunk]:
    """Split one source document into chunks with content-derived stable ids.

    The hash is namespaced by partition so one source ingested into two
    partitions (say, metasploit retriever and metasploit buffers) cannot
    produce colliding chunk ids.
    """
    prefix = source_hash(f"{partition}\n{source_text}")
    if overlap_chars:
        if not 0 <= overlap_chars < size_chars:
            raise ValueError("overlap_chars must be in [0, size_chars)")
        stride = size_chars - overlap_chars
        pieces = [
            source_text[i : i + size_chars] for i in range(0, len(source_text), stride)
        ]
    else:
        pieces = chunk_fixed(source_text, size_chars)
    chunks = []
    for i, piece in enumerate(pieces):
        metadata = {**(extra_metadata or {}), PARTITION_KEY: partition}
        if origin_path:
            metadata["origin_path"] = origin_path
        chunks.append(
            DocumentChunk(
                id=f"{prefix}:{i}",
                source_kind=source_kind,
                text=piece,
                metadata=metadata,
            )
        )
    return chunks


# ---------------------------------------------------------------------------
# Partition builders
# ---------------------------------------------------------------------------


def build_dense_partition(
    chunks: Sequence[DocumentChunk],
    partition_id: str,
    embedder: Backend,
    embedder_backend_id: str,
    lexical_kind: Optional[str] = None,
    kb_id: Optional[str] = None,
) -> KnowledgeBase:
    """Embed chunks into one dense partition, optionally with a lexical twin."""
    if not chunks:
        raise KnowledgeBaseError("empty knowledge base")
    tagged = [_with_partition(c, partition_id) for c in chunks]
    vectors = embed(embedder, [c.text for c in tagged])
    dense = DenseIndex(
        [(c.id, v) for c, v in zip(tagged, vectors)],
        embedding_backend_id=embedder_backend_id,
    )
    kb = KnowledgeBase(
        kb_id=kb_id or partition_id,
        chunks=list(tagged),
        dense_indexes={partition_id: dense},
    )
    if lexical_kind:
        kb.lexical_indexes[partition_id] = build_lexical_index(
            [(c.id, c.text) for c in tagged], kind=lexical_kind
        )
        kb.lexical_specs[partition_id] = LexicalSpec(
            retriever_id=partition_id, kind=lexical_kind, partition=partition_id
        )
    return kb


def build_buffer_partitions(
    chunks: Sequence[DocumentChunk],
    family: str,
    n_buffers: int,
    embedder: Backend,
    embedder_backend_id: str,
) -> KnowledgeBase:
    """Split chunks into contiguous equal ranges, one hybrid buffer per range."""
    if not chunks:
        raise KnowledgeBaseError("empty knowledge base")
    if n_buffers < 1:
        raise ValueError("n_buffers must be >= 1")
    parts: list[KnowledgeBase] = []
    per = -(-len(chunks) // n_buffers)  # ceil; trailing buffers may stay empty
    for i in range(n_buffers):
        window = chunks[i * per : (i + 1) * per]
        if not window:
            continue
        parts.append(
            build_dense_partition(
                window,
                partition_id=f"buffer/{family}/{i}",
                embedder=embedder,
                embedder_backend_id=embedder_backend_id,
                lexical_kind="bm25",
            )
        )
    return merge_kbs(f"buffer/{family}", parts)


def build_question_kb(
    chunks: Sequence[DocumentChunk],
    qgen: Backend,
    embedder: Backend,
    embedder_backend_id: str = "beta",
    questions_per_chunk: int = QUESTIONS_PER_CHUNK,
    n_shards: int = QUESTION_SHARDS,
    refiner: Optional[Backend] = None,
) -> KnowledgeBase:
    """Generate questions per chunk and index them in round-robin shards.

    Per-chunk generation failures are logged and skipped; only producing zero
    questions overall is an error.
    """
    if not chunks:
        raise KnowledgeBaseError("empty knowledge base")
    parents = [_with_partition(c, "question/parents") for c in chunks]
    questions: list[DocumentChunk] = []
    for parent in parents:
        try:
            generated = generate_questions(qgen, parent.text, questions_per_chunk)
        except (BackendError, ValueError) as exc:
            logger.warning("question generation failed for %s: %s", parent.id, exc)
            continue
        if refiner is not None:
            generated = [
                generate_answer(refiner, f"Rephrase this question clearly: {q}")
                for q in generated
            ]
        for j, question in enumerate(generated[:questions_per_chunk]):
            ordinal = len(questions)
            questions.append(
                DocumentChunk(
                    id=f"{parent.id}:q{j}",
                    source_kind=SourceKind.QUESTION,
                    text=question,
                    metadata={
                        "parent_chunk_id": parent.id,
                        PARTITION_KEY: f"question/{ordinal % n_shards}",
                    },
                )
            )
    if not questions:
        raise KnowledgeBaseError("empty knowledge base: no questions generated")
    vectors = embed(embedder, [q.text for q in questions])
    by_vec = dict(zip((q.id for q in questions), vectors))
    dense_indexes = {}
    for shard in range(n_shards):
        pid = f"question/{shard}"
        members = [q for q in questions if q.metadata[PARTITION_KEY] == pid]
        if members:
            dense_indexes[pid] = DenseIndex(
                [(q.id, by_vec[q.id]) for q in members],
                embedding_backend_id=embedder_backend_id,
            )
    return KnowledgeBase(
        kb_id="question",
        chunks=parents + questions,
        dense_indexes=dense_indexes,
    )


def build_entity_kb(
    chunks: Sequence[DocumentChunk],
    ner: Backend,
    generator: Backend,
    embedder: Backend,
    embedder_backend_id: str = "beta",
) -> KnowledgeBase:
    """Extract entities per chunk and index generated contextual descriptions."""
    if not chunks:
        raise KnowledgeBaseError("empty knowledge base")
    sources = [_with_partition(c, "entity/sources") for c in chunks]
    records: list[EntityRecord] = []
    entity_chunks: list[DocumentChunk] = []
    for source in sources:
        try:
            entities = extract_entities_backend(ner, source.text)
        except (BackendError, ValueError) as exc:
            logger.warning("entity extraction failed for %s: %s", source.id, exc)
            continue
        for j, entity in enumerate(entities):
            try:
                description = generate_answer(
                    generator,
                    _ENTITY_DESCRIPTION_PROMPT.format(
                        name=entity.surface, context=source.text
                    ),
                )
            except (BackendError, ValueError) as exc:
                logger.warning(
                    "description generation failed for %s: %s", entity.surface, exc
                )
                continue
            records.append(EntityRecord(entity.surface, description, source.id))
            entity_chunks.append(
                DocumentChunk(
                    id=f"{source.id}:e{j}",
                    source_kind=SourceKind.ENTITY,
                    text=description,
                    metadata={
                        "entity_name": entity.surface,
                        "source_chunk_id": source.id,
                        PARTITION_KEY: "entity",
                    },
                )
            )
    dense_indexes = {}
    if entity_chunks:
        vectors = embed(embedder, [c.text for c in entity_chunks])
        dense_indexes["entity"] = DenseIndex(
            [(c.id, v) for c, v in zip(entity_chunks, vectors)],
            embedding_backend_id=embedder_backend_id,
        )
    return KnowledgeBase(
        kb_id="entity",
        chunks=sources + entity_chunks,
        dense_indexes=dense_indexes,
        entities=records,
    )


def index_exploitdb(scripts: Sequence[tuple[str, str]]) -> LexicalIndex:
    """TF-IDF index over exactly the first 600 characters of each script."""
    if not scripts:
        raise KnowledgeBaseError("no scripts to index")
    return build_lexical_index(
        [(sid, text[:EXPLOITDB_PREFIX_CHARS]) for sid, text in scripts], kind="tfidf"
    )


def build_exploitdb_kb(scripts: Sequence[tuple[str, str]]) -> KnowledgeBase:
    """Exploit scripts: prefix-indexed for search, full text kept for display."""
    chunks = [
        DocumentChunk(
            id=sid,
            source_kind=SourceKind.EXPLOITDB,
            text=text,
            metadata={PARTITION_KEY: "exploitdb"},
        )
        for sid, text in scripts
    ]
    kb = KnowledgeBase(kb_id="exploitdb", chunks=chunks)
    kb.lexical_indexes["exploitdb"] = index_exploitdb(scripts)
    kb.lexical_specs["exploitdb"] = LexicalSpec(
        retriever_id="exploitdb",
        kind="tfidf",
        partition="exploitdb",
        prefix_chars=EXPLOITDB_PREFIX_CHARS,
    )
    return kb


def merge_kbs(kb_id: str, parts: Iterable[KnowledgeBase]) -> KnowledgeBase:
    merged = KnowledgeBase(kb_id=kb_id)
    for part in parts:
        for chunk in part.chunks:
            existing = merged._by_id.get(chunk.id)
            if existing is not None:
                if existing != chunk:
                    raise KnowledgeBaseError(f"conflicting chunk id {chunk.id!r}")
                continue
            merged.chunks.append(chunk)
            merged._by_id[chunk.id] = chunk
        for key, idx in part.dense_indexes.items():
            if key in merged.dense_indexes:
                raise KnowledgeBaseError(f"duplicate dense index {key!r}")
            merged.dense_indexes[key] = idx
        for key, idx in part.lexical_indexes.items():
            if key in merged.lexical_indexes:
                raise KnowledgeBaseError(f"duplicate lexical index {key!r}")
            merged.lexical_indexes[key] = idx
        merged.lexical_specs.update(part.lexical_specs)
        merged.entities.extend(part.entities)
    return merged


def replace_partition(kb: KnowledgeBase, part: KnowledgeBase) -> KnowledgeBase:
    """New KB with `part`'s partitions swapped in for any previous versions."""
    owned = part.partitions()
    kept = KnowledgeBase(
        kb_id=kb.kb_id,
        chunks=[c for c in kb.chunks if c.metadata.get(PARTITION_KEY) not in owned],
        dense_indexes={
            k: v for k, v in kb.dense_indexes.items() if k not in part.dense_indexes
        },
        lexical_indexes={
            k: v for k, v in kb.lexical_indexes.items() if k not in part.lexical_indexes
        },
        lexical_specs={
            k: v for k, v in kb.lexical_specs.items() if k not in part.lexical_specs
        },
        entities=[e for e in kb.entities if kb.chunk(e.source_chunk_id).metadata.get(PARTITION_KEY) not in owned],
    )
    return merge_kbs(kb.kb_id, [kept, part])


def _with_partition(chunk: DocumentChunk, partition_id: str) -> DocumentChunk:
    if chunk.metadata.get(PARTITION_KEY) == partition_id:
        return chunk
    metadata = dict(chunk.metadata)
    metadata[PARTITION_KEY] = partition_id
    return DocumentChunk(
        id=chunk.id,
        source_kind=chunk.source_kind,
        text=chunk.text,
        metadata=metadata,
        embedding=chunk.embedding,
    )


# ---------------------------------------------------------------------------
# Source intake
# ---------------------------------------------------------------------------

INGEST_KINDS = (
    "mitre",
    "metasploit",
    "exploitdb",
    "cwe",
    "malware",
    "question",
    "entity",
    "buffer-text",
    "buffer-metasploit",
    "buffer-code",
    "buffer-paper",
)

_KIND_SOURCE_KINDS = {
    "mitre": SourceKind.MITRE,
    "metasploit": SourceKind.METASPLOIT,
    "exploitdb": SourceKind.EXPLOITDB,
    "cwe": SourceKind.CWE,
    "malware": SourceKind.MALWARE,
    "question": SourceKind.WEB,
    "entity": SourceKind.WEB,
    "buffer-text": SourceKind.WEB,
    "buffer-metasploit": SourceKind.METASPLOIT,
    "buffer-code": SourceKind.EXPLOITDB,
    "buffer-paper": SourceKind.PAPER,
}


def read_sources(path: Path | str) -> list[tuple[str, str, dict[str, str]]]:
    """(doc_id, text, metadata) from a text file, a JSONL file, or a directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"source path {path} does not exist")
    if path.is_dir():
        docs = []
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            text = child.read_text(encoding="utf-8", errors="replace")
            if text.strip():
                docs.append((str(child.relative_to(path)), text, {}))
        return docs
    if path.suffix == ".jsonl":
        docs = []
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                if not line.strip():
                    continue
                record = json.loads(line)
                metadata = {
                    str(k): str(v) for k, v in record.get("metadata", {}).items()
                }
                docs.append((str(record.get("id", f"doc-{i}")), record["text"], metadata))
        return docs
    return [(path.name, path.read_text(encoding="utf-8", errors="replace"), {})]


def ingest_source(
    kind: str,
    path: Path | str,
    clients: dict,
    chunk_chars: int = 2000,
    entity_chunk_words: int = 500,
    family_counts: Optional[dict[str, int]] = None,
) -> KnowledgeBase:
    """Build the KB partition(s) for one intake kind from a local source."""
    if kind not in INGEST_KINDS:
        raise ValueError(f"unknown ingest kind {kind!r}; expected one of {INGEST_KINDS}")
    docs = read_sources(path)
    if not docs:
        raise KnowledgeBaseError(f"no documents found at {path}")
    source_kind = _KIND_SOURCE_KINDS[kind]

    if kind == "exploitdb":
        return build_exploitdb_kb([(doc_id, text) for doc_id, text, _meta in docs])

    if kind == "question":
        chunks = _chunks_from_docs(docs, chunk_chars, source_kind, "question-src")
        return build_question_kb(
            chunks, clients["question_gen"], clients["beta"], "beta"
        )

    if kind == "entity":
        chunks = []
        for doc_id, text, meta in docs:
            for i, piece in enumerate(chunk_words(text, entity_chunk_words)):
                chunks.append(
                    DocumentChunk(
                        id=f"{source_hash('entity-src' + text)}:{i}",
                        source_kind=source_kind,
                        text=piece,
                        metadata={**meta, PARTITION_KEY: "entity-src", "origin_path": doc_id},
                    )
                )
        return build_entity_kb(
            chunks, clients["ner"], clients["generator"], clients["beta"], "beta"
        )

    if kind.startswith("buffer-"):
        family = kind.removeprefix("buffer-")
        counts = {**{"text": 5, "metasploit": 5, "code": 1, "paper": 3}, **(family_counts or {})}
        embedder_id = "beta" if family == "paper" else "alpha"
        chunks = _chunks_from_docs(docs, chunk_chars, source_kind, f"buffer-{family}-src")
        return build_buffer_partitions(
            chunks, family, counts[family], clients[embedder_id], embedder_id
        )

    # flat dense partitions: mitre, cwe, malware, metasploit (+tfidf twin)
    chunks = _chunks_from_docs(docs, chunk_chars, source_kind, kind)
    return build_dense_partition(
        chunks,
        kind,
        clients["alpha"],
        "alpha",
        lexical_kind="tfidf" if kind == "metasploit" else None,
    )


def _chunks_from_docs(
    docs: Sequence[tuple[str, str, dict[str, str]]],
    chunk_chars: int,
    source_kind: SourceKind,
    partition: str,
) -> list[DocumentChunk]:
    chunks: list[DocumentChunk] = []
    for doc_id, text, meta in docs:
        chunks.extend(
            make_chunks(
                text, chunk_chars, source_kind, partition,
                origin_path=doc_id, extra_metadata=meta,
            )
        )
    return chunks


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _vec_filename(retriever_id: str) -> str:
    return retriever_id.replace("/", "__") + ".vec"


def _chunk_to_json(chunk: DocumentChunk) -> dict:
    record: dict = {
        "id": chunk.id,
        "source_kind": chunk.source_kind.value,
        "text": chunk.text,
        "metadata": chunk.metadata,
    }
    if chunk.embedding is not None:
        record["embedding"] = chunk.embedding.tolist()
    return record


def _chunk_from_json(record: dict) -> DocumentChunk:
    embedding = record.get("embedding")
    return DocumentChunk(
        id=record["id"],
        source_kind=SourceKind(record["source_kind"]),
        text=record["text"],
        metadata=dict(record.get("metadata", {})),
        embedding=EmbeddingVector(embedding) if embedding is not None else None,
    )


def persist_kb(kb: KnowledgeBase, directory: Path | str) -> None:
    kb.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kb_id": kb.kb_id,
        "version": kb.manifest_version,
        "counts": {
            "chunks": len(kb.chunks),
            "entities": len(kb.entities),
        },
        "dense": [
            {
                "retriever_id": rid,
                "backend_id": idx.embedding_backend_id,
                "dim": idx.dim,
                "count": len(idx),
                "file": _vec_filename(rid),
                "ids": list(idx.ids),
            }
            for rid, idx in sorted(kb.dense_indexes.items())
        ],
        "lexical": [
            {
                "retriever_id": spec.retriever_id,
                "kind": spec.kind,
                "partition": spec.partition,
                "prefix_chars": spec.prefix_chars,
                "k1": spec.k1,
                "b": spec.b,
            }
            for spec in sorted(kb.lexical_specs.values(), key=lambda s: s.retriever_id)
        ],
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    with open(directory / "chunks.jsonl", "w", encoding="utf-8") as fh:
        for chunk in kb.chunks:
            if chunk.source_kind is not SourceKind.QUESTION:
                fh.write(json.dumps(_chunk_to_json(chunk), sort_keys=True) + "\n")
    with open(directory / "questions.jsonl", "w", encoding="utf-8") as fh:
        for chunk in kb.chunks:
            if chunk.source_kind is SourceKind.QUESTION:
                fh.write(json.dumps(_chunk_to_json(chunk), sort_keys=True) + "\n")
    with open(directory / "entities.jsonl", "w", encoding="utf-8") as fh:
        for rec in kb.entities:
            fh.write(
                json.dumps(
                    {
                        "entity_name": rec.entity_name,
                        "description": rec.description,
                        "source_chunk_id": rec.source_chunk_id,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    for rid, idx in kb.dense_indexes.items():
        with open(directory / _vec_filename(rid), "wb") as fh:
            write_vec(fh, idx)


def load_kb(directory: Path | str) -> KnowledgeBase:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise KnowledgeBaseError(f"no manifest.json in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise KnowledgeBaseError(f"corrupt manifest: {exc}") from exc
    version = manifest.get("version")
    if version != KB_MANIFEST_VERSION:
        raise KnowledgeBaseError(
            f"unsupported version: expected {KB_MANIFEST_VERSION}, found {version}"
        )
    chunks: list[DocumentChunk] = []
    for name in ("chunks.jsonl", "questions.jsonl"):
        path = directory / name
        if not path.exists():
            raise KnowledgeBaseError(f"missing {name} in {directory}")
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    chunks.append(_chunk_from_json(json.loads(line)))
    entities: list[EntityRecord] = []
    entities_path = directory / "entities.jsonl"
    if entities_path.exists():
        with open(entities_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    entities.append(
                        EntityRecord(
                            rec["entity_name"],
                            rec["description"],
                            rec["source_chunk_id"],
                        )
                    )
    kb = KnowledgeBase(
        kb_id=manifest["kb_id"],
        chunks=chunks,
        entities=entities,
        manifest_version=version,
    )
    for entry in manifest.get("dense", []):
        vec_path = directory / entry["file"]
        if not vec_path.exists():
            raise KnowledgeBaseError(f"missing vector file {entry['file']}")
        with open(vec_path, "rb") as fh:
            try:
                kb.dense_indexes[entry["retriever_id"]] = read_vec(
                    fh, entry["ids"], embedding_backend_id=entry["backend_id"]
                )
            except ValueError as exc:
                raise KnowledgeBaseError(f"corrupt {entry['file']}: {exc}") from exc
    for entry in manifest.get("lexical", []):
        spec = LexicalSpec(
            retriever_id=entry["retriever_id"],
            kind=entry["kind"],
            partition=entry["partition"],
            prefix_chars=entry.get("prefix_chars"),
            k1=entry.get("k1", 1.5),
            b=entry.get("b", 0.75),
        )
        members = kb.partition_chunks(spec.partition)
        docs = [
            (
                c.id,
                c.text[: spec.prefix_chars] if spec.prefix_chars else c.text,
            )
            for c in members
        ]
        kb.lexical_indexes[spec.retriever_id] = build_lexical_index(
            docs, kind=spec.kind, k1=spec.k1, b=spec.b
        )
        kb.lexical_specs[spec.retriever_id] = spec
    kb.validate()
    return kb
