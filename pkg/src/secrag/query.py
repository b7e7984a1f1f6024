"""Query refinement: CVE/CWE extraction, description substitution, expansion.

Turns a raw user query x into the refined bundle used by all retrievers: the
substituted query q' (vulnerability ids annotated with their official
descriptions) plus one follow-up sub-query per detected entity ("Who is e?" /
"What is e?"). Lookup or NER failures never fail the whole refinement; the
query simply degrades to fewer enrichments.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .backends import Backend, BackendError, NerEntity, extract_entities_backend, http_get_json

logger = logging.getLogger(__name__)

_VULN_ID_RE = re.compile(
    r"(?<![\w-])(CVE-\d{4}-\d{4,7}(?!\d)|CWE-\d{1,5}(?!\d))", re.IGNORECASE
)

DEFAULT_CACHE_TTL_S = 24 * 3600


class VulnLookupError(Exception):
    """Every description lookup failed."""


@dataclass(frozen=True)
class VulnRef:
    kind: str  # "CVE" | "CWE"
    id: str
    description: Optional[str] = None

    def __post_init__(self) -> None:
        pattern = r"CVE-\d{4}-\d{4,7}$" if self.kind == "CVE" else r"CWE-\d{1,5}$"
        if self.kind not in ("CVE", "CWE") or not re.fullmatch(pattern, self.id):
            raise ValueError(f"malformed {self.kind} id {self.id!r}")


@dataclass(frozen=True)
class RefinedQuery:
    original: str
    substituted: str
    vuln_ids: tuple[VulnRef, ...] = ()
    entities: tuple[NerEntity, ...] = ()
    expanded: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.expanded:
            object.__setattr__(self, "expanded", (self.substituted,))
        if self.expanded[0] != self.substituted:
            raise ValueError("expanded[0] must equal the substituted query")


class VulnClient(Protocol):
    def lookup(self, vuln_id: str) -> Optional[str]: ...


class StaticVulnClient:
    """In-memory id -> description map; counts lookups for cache tests."""

    def __init__(self, descriptions: dict[str, str]):
        self.descriptions = {k.upper(): v for k, v in descriptions.items()}
        self.calls = 0

    def lookup(self, vuln_id: str) -> Optional[str]:
        self.calls += 1
        return self.descriptions.get(vuln_id.upper())


class JsonlVulnClient(StaticVulnClient):
    """Loads a JSONL snapshot: {"id","description"} or the CWE catalog form
    {"id","name","description","examples"}."""

    def __init__(self, path: Path | str):
        descriptions: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                text = record.get("description", "")
                if record.get("name"):
                    text = f"{record['name']}: {text}" if text else record["name"]
                if text:
                    descriptions[record["id"].upper()] = text
        super().__init__(descriptions)


class HttpCveClient:
    """NVD-style JSON API: GET {base_url}?cveId=CVE-... ."""

    def __init__(self, base_url: str, timeout_ms: int = 10_000, max_retries: int = 2):
        self.base_url = base_url
        self.timeout_ms = timeout_ms
        self.max_retries = max_retries
        self.calls = 0

    def lookup(self, vuln_id: str) -> Optional[str]:
        self.calls += 1
        data = http_get_json(
            self.base_url,
            params={"cveId": vuln_id},
            timeout_ms=self.timeout_ms,
            max_retries=self.max_retries,
            client_id="cve-lookup",
        )
        for vuln in data.get("vulnerabilities", []):
            for desc in vuln.get("cve", {}).get("descriptions", []):
                if desc.get("lang", "en") == "en" and desc.get("value"):
                    return desc["value"]
        return None


class VulnDescriptionCache:
    """TTL cache for vulnerability descriptions; expired entries never served."""

    def __init__(
        self,
        ttl_seconds: float = DEFAULT_CACHE_TTL_S,
        clock: Callable[[], float] = time.monotonic,
    ):
        if ttl_seconds <= 0:
            raise ValueError("ttl_seconds must be positive")
        self.ttl_seconds = ttl_seconds
        self._clock = clock
        self._entries: dict[str, tuple[str, float]] = {}
        self._lock = threading.Lock()

    def get(self, vuln_id: str) -> Optional[str]:
        with self._lock:
            entry = self._entries.get(vuln_id)
            if entry is None:
                return None
            description, fetched_at = entry
            if self._clock() - fetched_at >= self.ttl_seconds:
                del self._entries[vuln_id]
                return None
            return description

    def put(self, vuln_id: str, description: str) -> None:
        with self._lock:
            self._entries[vuln_id] = (description, self._clock())


def extract_vuln_ids(query: str) -> list[VulnRef]:
    """CVE/CWE ids, uppercased, deduplicated, in order of first occurrence."""
    refs: list[VulnRef] = []
    seen: set[str] = set()
    for match in _VULN_ID_RE.finditer(query):
        normalized = match.group(0).upper()
        if normalized in seen:
            continue
        seen.add(normalized)
        refs.append(VulnRef(kind=normalized[:3], id=normalized))
    return refs


def resolve_vuln_descriptions(
    ids: Sequence[VulnRef],
    cve_client: Optional[VulnClient] = None,
    cwe_client: Optional[VulnClient] = None,
    cache: Optional[VulnDescriptionCache] = None,
) -> dict[str, str]:
    """Map each id to a description; unresolvable ids are simply omitted.

    Raises VulnLookupError only when ids were given and every lookup errored.
    """
    if not ids:
        return {}
    resolved: dict[str, str] = {}
    to_fetch: list[VulnRef] = []
    for ref in ids:
        cached = cache.get(ref.id) if cache is not None else None
        if cached is not None:
            resolved[ref.id] = cached
        else:
            to_fetch.append(ref)

    def fetch(ref: VulnRef) -> tuple[VulnRef, Optional[str], Optional[Exception]]:
        client = cve_client if ref.kind == "CVE" else cwe_client
        if client is None:
            return ref, None, None
        try:
            return ref, client.lookup(ref.id), None
        except Exception as exc:  # transport errors are per-id, not fatal
            logger.warning("description lookup failed for %s: %s", ref.id, exc)
            return ref, None, exc

    errors = 0
    if to_fetch:
        with ThreadPoolExecutor(max_workers=min(4, len(to_fetch))) as pool:
            for ref, description, exc in pool.map(fetch, to_fetch):
                if exc is not None:
                    errors += 1
                elif description:
                    resolved[ref.id] = description
                    if cache is not None:
                        cache.put(ref.id, description)
    if errors and errors == len(to_fetch) and not resolved:
        raise VulnLookupError(f"all {errors} description lookups failed")
    return resolved


def substitute_descriptions(query: str, descriptions: dict[str, str]) -> str:
    """Replace each resolvable id with "<ID> (<description>)", verbatim otherwise."""

    def replace(match: re.Match) -> str:
        normalized = match.group(0).upper()
        description = descriptions.get(normalized)
        if description is None:
            return match.group(0)
        return f"{normalized} ({description})"

    return _VULN_ID_RE.sub(replace, query)


def expand_queries(substituted: str, entities: Sequence[NerEntity]) -> list[str]:
    """q' first, then one question per entity; duplicate questions dropped."""
    expanded = [substituted]
    for entity in entities:
        template = "Who is {}?" if entity.label == "PER" else "What is {}?"
        question = template.format(entity.surface)
        if question not in expanded:
            expanded.append(question)
    return expanded


def handle_query(
    query: str,
    ner: Optional[Backend] = None,
    cve_client: Optional[VulnClient] = None,
    cwe_client: Optional[VulnClient] = None,
    cache: Optional[VulnDescriptionCache] = None,
) -> RefinedQuery:
    """Full refinement pass; external-service failures degrade, never raise."""
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    refs = extract_vuln_ids(query)
    descriptions: dict[str, str] = {}
    if refs:
        try:
            descriptions = resolve_vuln_descriptions(refs, cve_client, cwe_client, cache)
        except VulnLookupError as exc:
            logger.warning("continuing without descriptions: %s", exc)
    substituted = substitute_descriptions(query, descriptions)
    entities: list[NerEntity] = []
    if ner is not None:
        try:
            entities = extract_entities_backend(ner, substituted)
        except (BackendError, ValueError) as exc:
            logger.warning("continuing without entities: %s", exc)
    expanded = expand_queries(substituted, entities)
    return RefinedQuery(
        original=query,
        substituted=substituted,
        vuln_ids=tuple(
            VulnRef(ref.kind, ref.id, descriptions.get(ref.id)) for ref in refs
        ),
        entities=tuple(entities),
        expanded=tuple(expanded),
    )
