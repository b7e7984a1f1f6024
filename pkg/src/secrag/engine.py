"""Query-to-answer orchestration: refine, retrieve, fall back, wrap, generate.

The cascade contract: the unstructured stage runs if and only if the
structured stage produced an empty bundle, and a query no stage can serve
terminates with the fixed no-information message instead of reaching the
generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .backends import Backend, BackendError, generate_answer
from .ingestion import KnowledgeBase
from .query import RefinedQuery, VulnClient, VulnDescriptionCache, handle_query
from .structured import (
    ContextBundle,
    RetrieverConfig,
    RetrieverDiagnostics,
    default_retriever_configs,
    run_structured,
)
from .unstructured import (
    BufferConfig,
    TransformConfig,
    default_buffer_configs,
    resolve_text,
    run_unstructured,
)

NO_INFORMATION_MESSAGE = "No relevant information found."

_TEMPLATE_DIR = Path(__file__).parent / "templates"
_ZONE_NAMES = (("code", "code_zone"), ("question", "question_zone"), ("info", "info_zone"))


class GenerationError(Exception):
    """Answer generation failed; carries the assembled prompt for retry."""

    def __init__(self, message: str, prompt: str = "", backend_id: str = ""):
        super().__init__(message)
        self.prompt = prompt
        self.backend_id = backend_id


@dataclass
class AnswerEnvelope:
    answer_text: str
    context: ContextBundle
    path: str  # structured | unstructured | none
    diagnostics: list[RetrieverDiagnostics] = field(default_factory=list)
    refined: Optional[RefinedQuery] = None

    def __post_init__(self) -> None:
        if (self.path == "none") != (self.answer_text == NO_INFORMATION_MESSAGE):
            raise ValueError(
                "path is 'none' exactly when the answer is the no-information message"
            )

    def to_dict(self, kb: Optional[KnowledgeBase] = None, include_timings: bool = True) -> dict:
        segments = []
        for zone, attr in _ZONE_NAMES:
            for doc in getattr(self.context, attr):
                segment = {
                    "zone": zone,
                    "retriever_id": doc.retriever_id,
                    "score": doc.score,
                    "chunk_id": doc.chunk_id,
                }
                if kb is not None:
                    segment["text"] = resolve_text(kb, doc.chunk_id)
                segments.append(segment)
        diagnostics = []
        for diag in self.diagnostics:
            entry = {"retriever_id": diag.retriever_id, "hits": diag.hits}
            if include_timings:
                entry["elapsed_ms"] = diag.elapsed_ms
            if diag.error:
                entry["error"] = diag.error
            diagnostics.append(entry)
        refined = None
        if self.refined is not None:
            refined = {
                "original": self.refined.original,
                "substituted": self.refined.substituted,
                "vuln_ids": [
                    {"kind": v.kind, "id": v.id, "description": v.description}
                    for v in self.refined.vuln_ids
                ],
                "entities": [
                    {"surface": e.surface, "label": e.label, "span": list(e.span)}
                    for e in self.refined.entities
                ],
                "expanded": list(self.refined.expanded),
            }
        return {
            "answer": self.answer_text,
            "path": self.path,
            "context_segments": segments,
            "diagnostics": diagnostics,
            "refined": refined,
        }

    def canonical_json(self, kb: Optional[KnowledgeBase] = None) -> str:
        """Stable byte representation; timings are observability, not payload."""
        return json.dumps(
            self.to_dict(kb=kb, include_timings=False), sort_keys=True, ensure_ascii=False
        )


def render_context(bundle: ContextBundle, kb: KnowledgeBase) -> str:
    lines: list[str] = []
    for zone, attr in _ZONE_NAMES:
        for doc in getattr(bundle, attr):
            lines.append(
                f"### [{zone}] retriever={doc.retriever_id} "
                f"chunk={doc.chunk_id} score={doc.score:.4f}"
            )
            lines.append(resolve_text(kb, doc.chunk_id))
            lines.append("")
    return "\n".join(lines)


def load_template(template_id: str) -> str:
    path = _TEMPLATE_DIR / f"{template_id}.txt"
    if not path.exists():
        raise ValueError(f"unknown prompt template {template_id!r}")
    return path.read_text(encoding="utf-8")


def wrap_prompt(
    context: ContextBundle,
    query: RefinedQuery,
    template_id: str = "default",
    kb: Optional[KnowledgeBase] = None,
) -> str:
    """Deterministic prompt: code, question, info zones in order, then the query."""
    if context.is_empty:
        raise ValueError("cannot wrap an empty context; route to the terminal instead")
    if kb is None:
        raise ValueError("a knowledge base is required to resolve segment text")
    template = load_template(template_id)
    return template.format(
        context=render_context(context, kb), question=query.substituted
    )


class Engine:
    """Serving state: one knowledge base, backend clients, retriever configs."""

    def __init__(
        self,
        kb: KnowledgeBase,
        clients: Mapping[str, Backend],
        retriever_configs: Optional[Mapping[str, RetrieverConfig]] = None,
        buffer_configs: Optional[Sequence[BufferConfig]] = None,
        transform_config: Optional[TransformConfig] = None,
        generator_id: str = "generator",
        ner_id: Optional[str] = "ner",
        cve_client: Optional[VulnClient] = None,
        cwe_client: Optional[VulnClient] = None,
        cache: Optional[VulnDescriptionCache] = None,
        template_id: str = "default",
        structured_timeout_s: Optional[float] = 10.0,
        unstructured_timeout_s: Optional[float] = 60.0,
    ):
        self.kb = kb
        self.clients = dict(clients)
        self.retriever_configs = dict(retriever_configs or default_retriever_configs())
        self.buffer_configs = list(
            buffer_configs if buffer_configs is not None else default_buffer_configs()
        )
        self.transform_config = transform_config or TransformConfig()
        self.generator_id = generator_id
        self.ner_id = ner_id
        self.cve_client = cve_client
        self.cwe_client = cwe_client
        self.cache = cache or VulnDescriptionCache()
        self.template_id = template_id
        self.structured_timeout_s = structured_timeout_s
        self.unstructured_timeout_s = unstructured_timeout_s

    def refine(self, query: str) -> RefinedQuery:
        ner = self.clients.get(self.ner_id) if self.ner_id else None
        return handle_query(
            query,
            ner=ner,
            cve_client=self.cve_client,
            cwe_client=self.cwe_client,
            cache=self.cache,
        )

    def answer(self, query: str) -> AnswerEnvelope:
        # capture the KB reference once: an atomic swap mid-query must not mix
        # two KB generations inside one answer
        kb = self.kb
        refined = self.refine(query)
        bundle, diagnostics = run_structured(
            refined, kb, self.retriever_configs, self.clients,
            timeout_s=self.structured_timeout_s,
        )
        if not bundle.is_empty:
            return self._generate(kb, refined, bundle, diagnostics, "structured")
        if self.buffer_configs:
            fallback, buffer_diags = run_unstructured(
                refined, kb, self.buffer_configs, self.transform_config, self.clients,
                timeout_s=self.unstructured_timeout_s,
            )
            diagnostics = diagnostics + buffer_diags
            if not fallback.is_empty:
                return self._generate(kb, refined, fallback, diagnostics, "unstructured")
        return AnswerEnvelope(
            answer_text=NO_INFORMATION_MESSAGE,
            context=ContextBundle(source_path="none"),
            path="none",
            diagnostics=diagnostics,
            refined=refined,
        )

    def _generate(
        self,
        kb: KnowledgeBase,
        refined: RefinedQuery,
        bundle: ContextBundle,
        diagnostics: list[RetrieverDiagnostics],
        path: str,
    ) -> AnswerEnvelope:
        prompt = wrap_prompt(bundle, refined, self.template_id, kb)
        try:
            answer_text = generate_answer(self.clients[self.generator_id], prompt)
        except (BackendError, KeyError) as exc:
            backend_id = getattr(exc, "backend_id", "") or self.generator_id
            raise GenerationError(
                f"generation failed: {exc}", prompt=prompt, backend_id=backend_id
            ) from exc
        if not answer_text.strip():
            raise GenerationError("generator returned an empty answer", prompt=prompt)
        return AnswerEnvelope(
            answer_text=answer_text,
            context=bundle,
            path=path,
            diagnostics=diagnostics,
            refined=refined,
        )
