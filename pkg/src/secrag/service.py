"""HTTP service: query, ingest, health, and evaluation endpoints.

State swaps are atomic reference replacements; in-flight queries keep the
knowledge base they started with, and at most one ingest may run per
partition kind at a time.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse

from .backends import BackendError, ScriptedJudge, make_client, probe_endpoint
from .config import ServiceConfig
from .engine import Engine, GenerationError
from .evaluation import (
    BattleRecord,
    EvalItem,
    bootstrap_elo,
    build_report,
    elo_tournament,
    evaluate_items,
    failure_rate_ci,
    mle_elo_fit,
    render_table,
)
from .ingestion import (
    INGEST_KINDS,
    KnowledgeBase,
    KnowledgeBaseError,
    ingest_source,
    load_kb,
    persist_kb,
    replace_partition,
)
from .query import JsonlVulnClient, HttpCveClient

logger = logging.getLogger(__name__)

_SCHEMA_DIR = Path(__file__).parent / "schemas"


def build_engine(config: ServiceConfig, kb: Optional[KnowledgeBase] = None) -> Engine:
    """Assemble an engine from configuration (loads the KB when not given)."""
    if kb is None:
        kb = load_kb(config.kb_root)
    clients = {cfg.backend_id: make_client(cfg) for cfg in config.backends}
    cve_client = None
    if config.cve_fixture:
        cve_client = JsonlVulnClient(config.cve_fixture)
    elif config.cve_api_url:
        cve_client = HttpCveClient(config.cve_api_url)
    cwe_client = JsonlVulnClient(config.cwe_catalog) if config.cwe_catalog else None
    return Engine(
        kb=kb,
        clients=clients,
        retriever_configs=config.retrievers,
        buffer_configs=config.buffers,
        transform_config=config.transform,
        cve_client=cve_client,
        cwe_client=cwe_client,
        template_id=config.template_id,
    )


class ServiceState:
    def __init__(self, config: ServiceConfig, engine: Optional[Engine] = None):
        self.config = config
        self.engine = engine
        self._swap_lock = threading.Lock()
        self._ingest_locks: dict[str, threading.Lock] = {
            kind: threading.Lock() for kind in INGEST_KINDS
        }

    def swap_kb(self, new_kb: KnowledgeBase) -> None:
        with self._swap_lock:
            if self.engine is None:
                raise RuntimeError("no engine to swap into")
            self.engine.kb = new_kb  # single reference assignment: atomic

    def try_ingest_lock(self, kind: str) -> Optional[threading.Lock]:
        lock = self._ingest_locks[kind]
        return lock if lock.acquire(blocking=False) else None


def _error(status: int, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message, **extra})


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="secrag", version="1")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    async def parse_body(request: Request) -> dict:
        raw = await request.body()
        data = json.loads(raw)
        if not isinstance(data, dict):
            raise ValueError("body must be a JSON object")
        return data

    @app.post("/v1/query")
    async def query(request: Request):
        try:
            body = await parse_body(request)
            query_text = body["query"]
            if not isinstance(query_text, str):
                raise ValueError("query must be a string")
            include_context = bool(body.get("include_context", True))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            return _error(400, f"malformed request body: {exc}")
        if not query_text.strip():
            return _error(422, "query must be non-empty")
        if state.engine is None:
            return _error(503, "knowledge base is loading")
        try:
            envelope = state.engine.answer(query_text)
        except GenerationError as exc:
            return _error(502, str(exc), backend_id=exc.backend_id)
        except BackendError as exc:
            return _error(502, str(exc), backend_id=exc.backend_id)
        payload = envelope.to_dict(kb=state.engine.kb)
        if not include_context:
            payload.pop("context_segments", None)
        return payload

    @app.post("/v1/ingest")
    async def ingest(request: Request):
        try:
            body = await parse_body(request)
            source_path = Path(body["source_path"])
            kind = body["kind"]
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            return _error(400, f"malformed request body: {exc}")
        if kind not in INGEST_KINDS:
            return _error(400, f"unknown kind {kind!r}")
        if not source_path.exists():
            return _error(404, f"source path {source_path} not found")
        if state.engine is None:
            return _error(503, "engine not ready")
        lock = state.try_ingest_lock(kind)
        if lock is None:
            return _error(409, f"ingest already running for kind {kind!r}")
        try:
            part = ingest_source(kind, source_path, state.engine.clients)
            new_kb = replace_partition(state.engine.kb, part)
            persist_kb(new_kb, state.config.kb_root)
            state.swap_kb(new_kb)
            return {
                "kb_id": new_kb.kb_id,
                "chunk_count": len(part.chunks),
                "partitions": sorted(part.partitions()),
            }
        except (KnowledgeBaseError, BackendError, OSError) as exc:
            return _error(500, f"ingest failed: {exc}")
        finally:
            lock.release()

    @app.get("/v1/health")
    async def health():
        if state.engine is None:
            return {"status": "loading", "kb_partitions": [], "backend_reachability": {}}
        kb = state.engine.kb
        reachability = {
            cfg.backend_id: probe_endpoint(cfg) for cfg in state.config.backends
        }
        return {
            "status": "ok" if kb.chunks else "empty",
            "kb_partitions": sorted(kb.partitions()),
            "backend_reachability": reachability,
        }

    @app.post("/v1/eval/metrics")
    async def eval_metrics(request: Request):
        try:
            body = await parse_body(request)
            items = [
                EvalItem(
                    question=entry["question"],
                    ground_truth=entry["ground_truth"],
                    answers=dict(entry["answers"]),
                    category=entry.get("category", "general"),
                    item_id=str(entry.get("item_id", "")),
                )
                for entry in body["items"]
            ]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            return _error(400, f"malformed request body: {exc}")
        if state.engine is None:
            return _error(503, "engine not ready")
        judge_script = body.get("judge_script")
        judge_backend = (
            ScriptedJudge(judge_script)
            if judge_script
            else state.engine.clients.get("judge")
        )
        if judge_backend is None:
            return _error(400, "no judge configured; provide judge_script")
        try:
            per_model = evaluate_items(
                items,
                qgen=state.engine.clients["question_gen"],
                embedder=state.engine.clients["beta"],
                judge_backend=judge_backend,
                n_questions=int(body.get("n_questions", 3)),
            )
        except (BackendError, KeyError, ValueError) as exc:
            return _error(502, f"evaluation failed: {exc}")
        report = build_report(per_model)
        report["table"] = render_table(report)
        return report

    @app.post("/v1/eval/battles")
    async def eval_battles(request: Request):
        try:
            body = await parse_body(request)
            battles = [
                BattleRecord(
                    model_a=entry["model_a"],
                    model_b=entry["model_b"],
                    outcome=entry["outcome"],
                    question_id=str(entry.get("question_id", "")),
                )
                for entry in body["battles"]
            ]
            if not battles:
                raise ValueError("battles must be non-empty")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            return _error(400, f"malformed request body: {exc}")
        defaults = state.config.eval
        rounds = int(body.get("rounds", defaults.rounds))
        seed = body.get("seed", defaults.seed)
        k = float(body.get("k", defaults.k))
        fit = mle_elo_fit(battles)
        return {
            "elo": elo_tournament(battles, k=k),
            "mle_elo": fit.ratings,
            "mle_diverged": sorted(fit.diverged),
            "bootstrap": {
                model: {"median": s.median, "p2_5": s.p2_5, "p97_5": s.p97_5}
                for model, s in bootstrap_elo(battles, rounds=rounds, seed=seed, k=k).items()
            },
        }

    @app.post("/v1/eval/failure")
    async def eval_failure(request: Request):
        try:
            body = await parse_body(request)
            rates = [float(r) for r in body["rates"]]
            n = int(body["n"])
            z = float(body.get("z", 1.96))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            return _error(400, f"malformed request body: {exc}")
        try:
            bound = failure_rate_ci(rates, n=n, z=z)
        except ValueError as exc:
            return _error(400, str(exc))
        return {"collective": bound.collective, "upper": bound.upper}

    @app.get("/schemas")
    async def list_schemas():
        return {"schemas": sorted(p.name for p in _SCHEMA_DIR.glob("*.schema.json"))}

    @app.get("/schemas/{name}")
    async def get_schema(name: str):
        path = _SCHEMA_DIR / name
        if not path.name == name or not path.exists():  # no traversal
            return _error(404, f"no schema {name!r}")
        return PlainTextResponse(path.read_text(encoding="utf-8"), media_type="application/json")

    return app
