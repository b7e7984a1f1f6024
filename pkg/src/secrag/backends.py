"""Clients for external model services, each with a deterministic in-process stub.

Five backend kinds exist: embedder, question_gen, ner, generator, judge.
Real services speak a minimal JSON-over-HTTP protocol
(``{"model", "input"|"prompt", ...} -> {"output": ...}``); the stubs are pure
functions of their inputs so the whole pipeline can run offline and
byte-reproducibly. No other module performs network I/O.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import httpx
import numpy as np

from .index import EmbeddingVector

ENV_ENDPOINT_PREFIX = "MORSE_BACKEND_"
STUB_EMBED_DIM = 64
_BACKOFF_BASE_S = 0.2

BACKEND_KINDS = ("embedder", "question_gen", "ner", "generator", "judge")

# Capitalized sentence-starters that the stub NER must not mistake for entities.
_NER_STOPWORDS = frozenset(
    "what who whom when where why how which the a an is are was were do does did"
    " can could should would will shall and or but of in on at to for it its"
    " this that these those there here".split()
)

_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")
_CAPITALIZED_RUN_RE = re.compile(r"(?<![\w-])[A-Z][\w-]*(?:[ \t]+[A-Z][\w-]*)*")


class BackendError(Exception):
    """A backend call failed; carries the offending backend_id."""

    def __init__(self, message: str, backend_id: str = ""):
        super().__init__(message)
        self.backend_id = backend_id


@dataclass(frozen=True)
class BackendConfig:
    """Configuration for one model service (real endpoint or "stub")."""

    backend_id: str
    kind: str
    endpoint: str = "stub"
    model_name: str = ""
    timeout_ms: int = 30_000
    max_retries: int = 2
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")

    def resolved_endpoint(self) -> str:
        """Endpoint after the MORSE_BACKEND_<ID>_URL environment override."""
        env_key = ENV_ENDPOINT_PREFIX + self.backend_id.upper().replace("-", "_") + "_URL"
        return os.environ.get(env_key, self.endpoint)

    @property
    def is_stub(self) -> bool:
        return self.resolved_endpoint() == "stub"


@dataclass(frozen=True)
class NerEntity:
    surface: str
    label: str  # PER | OBJ_CON | OTHER
    span: tuple[int, int]

    def __post_init__(self) -> None:
        start, end = self.span
        if not (0 <= start < end):
            raise ValueError(f"invalid span {self.span} for {self.surface!r}")


# ---------------------------------------------------------------------------
# Stubs
# ---------------------------------------------------------------------------


class StubEmbedder:
    """Maps each text through a seeded hash onto a fixed-dim unit vector."""

    def __init__(self, dim: int = STUB_EMBED_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.calls = 0

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed requires at least one text")
        self.calls += 1
        return [self._one(t) for t in texts]

    def _one(self, text: str) -> EmbeddingVector:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        raw = rng.standard_normal(self.dim)
        return EmbeddingVector((raw / np.linalg.norm(raw)).astype(np.float32))


class MappedEmbedder:
    """Test embedder returning scripted vectors per exact text.

    Unknown texts fall back to hash embeddings so pipelines stay runnable.
    """

    def __init__(self, mapping: dict[str, Sequence[float]], dim: Optional[int] = None):
        self.mapping = {k: EmbeddingVector(np.asarray(v)) for k, v in mapping.items()}
        dims = {v.dim for v in self.mapping.values()}
        if len(dims) > 1:
            raise ValueError("scripted vectors must share one dimension")
        self.dim = dim or (dims.pop() if dims else STUB_EMBED_DIM)
        self._fallback = StubEmbedder(dim=self.dim)
        self.calls = 0

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed requires at least one text")
        self.calls += 1
        out = []
        for t in texts:
            out.append(self.mapping[t] if t in self.mapping else self._fallback._one(t))
        return out


class StubQuestionGenerator:
    """Returns the chunk's first sentences, each suffixed with a question mark."""

    def __init__(self) -> None:
        self.calls = 0

    def generate(self, chunk_text: str, target_count: int = 7) -> list[str]:
        if not chunk_text.strip():
            raise BackendError("cannot generate questions from empty text")
        if target_count < 1:
            raise ValueError("target_count must be >= 1")
        self.calls += 1
        sentences = [s.strip() for s in _SENTENCE_SPLIT_RE.split(chunk_text) if s.strip()]
        if not sentences:
            raise BackendError("no sentences found in chunk")
        return [s + "?" for s in sentences[:target_count]]


class StubNer:
    """Capitalized token runs become OBJ_CON; runs led by known names become PER."""

    def __init__(self, person_names: Sequence[str] = ()):
        self.person_names = frozenset(person_names)
        self.calls = 0

    def extract(self, text: str) -> list[NerEntity]:
        if not text:
            raise ValueError("extract requires non-empty text")
        self.calls += 1
        found: list[NerEntity] = []
        seen: set[tuple[str, str]] = set()
        for match in _CAPITALIZED_RUN_RE.finditer(text):
            tokens = list(re.finditer(r"[A-Z][\w-]*", match.group(0)))
            # drop leading interrogatives/articles ("What is Mimikatz" -> "Mimikatz")
            first = 0
            while first < len(tokens) and tokens[first].group(0).lower() in _NER_STOPWORDS:
                first += 1
            if first == len(tokens):
                continue
            start = match.start() + tokens[first].start()
            surface = text[start:match.end()]
            label = "PER" if surface.split()[0] in self.person_names else "OBJ_CON"
            key = (surface, label)
            if key in seen:
                continue
            seen.add(key)
            found.append(NerEntity(surface, label, (start, start + len(surface))))
        return found


class StubGenerator:
    """Echoes the first context segment of the prompt plus the question."""

    def __init__(self) -> None:
        self.calls = 0

    def generate(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        self.calls += 1
        segment = _first_segment(prompt)
        question = _question_line(prompt)
        parts = [p for p in (segment, question) if p]
        return "\n".join(parts) if parts else prompt


class ScriptedJudge:
    """Replays a fixed sequence of verdict strings; errors when exhausted."""

    def __init__(self, script: Sequence[str] = ("[C]",)):
        self.script = list(script)
        self.calls = 0

    def judge(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if self.calls >= len(self.script):
            raise BackendError("scripted judge exhausted its verdicts")
        verdict = self.script[self.calls]
        self.calls += 1
        return verdict


def _first_segment(prompt: str) -> str:
    lines = prompt.splitlines()
    collected: list[str] = []
    in_segment = False
    for line in lines:
        if line.startswith("### ["):
            if in_segment:
                break
            in_segment = True
            continue
        if in_segment:
            if line.startswith("QUESTION:") or line.startswith("### ["):
                break
            collected.append(line)
    return "\n".join(collected).strip()


def _question_line(prompt: str) -> str:
    for line in prompt.splitlines():
        if line.startswith("QUESTION:"):
            return line[len("QUESTION:"):].strip()
    return ""


# ---------------------------------------------------------------------------
# HTTP clients
# ---------------------------------------------------------------------------


class _HttpBase:
    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        self.calls = 0

    def _post(self, payload: dict) -> dict:
        self.calls += 1
        url = self.cfg.resolved_endpoint()
        attempts = max(1, self.cfg.max_retries)
        timeout = self.cfg.timeout_ms / 1000.0
        last_error: Optional[Exception] = None
        for attempt in range(attempts):
            try:
                resp = httpx.post(url, json=payload, timeout=timeout)
                resp.raise_for_status()
                return resp.json()
            except (httpx.HTTPError, json.JSONDecodeError) as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    time.sleep(_BACKOFF_BASE_S * (2**attempt))
        raise BackendError(
            f"backend {self.cfg.backend_id!r} failed after {attempts} attempts: {last_error}",
            backend_id=self.cfg.backend_id,
        )


class HttpEmbedder(_HttpBase):
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("embed requires at least one text")
        data = self._post({"model": self.cfg.model_name, "input": list(texts)})
        vectors = [EmbeddingVector(np.asarray(row)) for row in data["output"]]
        dims = {v.dim for v in vectors}
        if len(dims) != 1 or len(vectors) != len(texts):
            raise BackendError(
                f"backend {self.cfg.backend_id!r} returned inconsistent embedding batch",
                backend_id=self.cfg.backend_id,
            )
        return vectors


class HttpQuestionGenerator(_HttpBase):
    def generate(self, chunk_text: str, target_count: int = 7) -> list[str]:
        data = self._post(
            {"model": self.cfg.model_name, "input": chunk_text, "count": target_count}
        )
        questions = [q for q in data["output"] if q]
        if not questions:
            raise BackendError(
                f"backend {self.cfg.backend_id!r} generated no questions",
                backend_id=self.cfg.backend_id,
            )
        return questions[:target_count]


class HttpNer(_HttpBase):
    def extract(self, text: str) -> list[NerEntity]:
        data = self._post({"model": self.cfg.model_name, "input": text})
        entities = []
        seen = set()
        for row in data["output"]:
            ent = NerEntity(row["surface"], row["label"], (row["start"], row["end"]))
            if ent.span[1] > len(text):
                raise BackendError(
                    f"backend {self.cfg.backend_id!r} returned out-of-range span",
                    backend_id=self.cfg.backend_id,
                )
            key = (ent.surface, ent.label)
            if key not in seen:
                seen.add(key)
                entities.append(ent)
        return entities


class HttpGenerator(_HttpBase):
    def generate(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        data = self._post({"model": self.cfg.model_name, "prompt": prompt})
        answer = data["output"]
        if not answer:
            raise BackendError(
                f"backend {self.cfg.backend_id!r} returned an empty answer",
                backend_id=self.cfg.backend_id,
            )
        return answer


class HttpJudge(HttpGenerator):
    judge = HttpGenerator.generate


# ---------------------------------------------------------------------------
# Factory and functional facade
# ---------------------------------------------------------------------------

_STUB_FACTORIES = {
    "embedder": lambda cfg: StubEmbedder(
        dim=int(cfg.options.get("dim", STUB_EMBED_DIM)),
        seed=int(cfg.options.get("seed", 0)),
    ),
    "question_gen": lambda cfg: StubQuestionGenerator(),
    "ner": lambda cfg: StubNer(person_names=tuple(cfg.options.get("person_names", ()))),
    "generator": lambda cfg: StubGenerator(),
    "judge": lambda cfg: ScriptedJudge(script=tuple(cfg.options.get("script", ("[C]",)))),
}

_HTTP_FACTORIES = {
    "embedder": HttpEmbedder,
    "question_gen": HttpQuestionGenerator,
    "ner": HttpNer,
    "generator": HttpGenerator,
    "judge": HttpJudge,
}


def make_client(cfg: BackendConfig):
    """Build the client for a config; "stub" endpoints get in-process stubs."""
    factory = (_STUB_FACTORIES if cfg.is_stub else _HTTP_FACTORIES)[cfg.kind]
    return factory(cfg)


def probe_endpoint(cfg: BackendConfig, timeout_ms: int = 500) -> bool:
    """Cheap reachability check; any HTTP response counts as reachable."""
    if cfg.is_stub:
        return True
    try:
        httpx.get(cfg.resolved_endpoint(), timeout=timeout_ms / 1000.0)
        return True
    except httpx.HTTPError:
        return False


def http_get_json(
    url: str,
    params: Optional[dict] = None,
    timeout_ms: int = 10_000,
    max_retries: int = 2,
    client_id: str = "",
) -> dict:
    """GET a JSON document with the same retry/backoff policy as the clients.

    Other modules (the CVE lookup client, for one) route their network access
    through here so this module stays the single networking boundary.
    """
    attempts = max(1, max_retries)
    last_error: Optional[Exception] = None
    for attempt in range(attempts):
        try:
            resp = httpx.get(url, params=params, timeout=timeout_ms / 1000.0)
            resp.raise_for_status()
            return resp.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            last_error = exc
            if attempt + 1 < attempts:
                time.sleep(_BACKOFF_BASE_S * (2**attempt))
    raise BackendError(
        f"GET {url} failed after {attempts} attempts: {last_error}",
        backend_id=client_id,
    )


def _resolve(backend, kind: str):
    if isinstance(backend, BackendConfig):
        if backend.kind != kind:
            raise ValueError(f"backend {backend.backend_id!r} is {backend.kind}, not {kind}")
        return make_client(backend)
    return backend


Backend = Union[BackendConfig, object]


def embed(backend: Backend, texts: Sequence[str]) -> list[EmbeddingVector]:
    if not texts:
        raise ValueError("embed requires at least one text")
    return _resolve(backend, "embedder").embed(texts)


def generate_questions(backend: Backend, chunk_text: str, target_count: int = 7) -> list[str]:
    if not chunk_text:
        raise ValueError("chunk_text must be non-empty")
    return _resolve(backend, "question_gen").generate(chunk_text, target_count)


def extract_entities_backend(backend: Backend, text: str) -> list[NerEntity]:
    if not text:
        raise ValueError("text must be non-empty")
    return _resolve(backend, "ner").extract(text)


def generate_answer(backend: Backend, prompt: str) -> str:
    if not prompt:
        raise ValueError("prompt must be non-empty")
    return _resolve(backend, "generator").generate(prompt)


def judge(backend: Backend, prompt: str) -> str:
    if not prompt:
        raise ValueError("prompt must be non-empty")
    return _resolve(backend, "judge").judge(prompt)
