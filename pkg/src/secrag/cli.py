"""Command line interface: ingest, query, serve, and the evaluation suite.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .backends import BackendError, ScriptedJudge, make_client
from .config import load_config
from .engine import GenerationError
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

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this tool reserves 2 for runtime."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="secrag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_ingest = sub.add_parser("ingest", help="build a KB partition from local sources")
    p_ingest.add_argument("source", help="text file, JSONL file, or directory")
    p_ingest.add_argument("--kind", required=True, choices=INGEST_KINDS)
    p_ingest.add_argument("--out", required=True, help="KB directory to write")
    p_ingest.add_argument("--config", default=None)

    p_query = sub.add_parser("query", help="answer one query against a local KB")
    p_query.add_argument("text")
    p_query.add_argument("--kb", required=True, help="KB directory")
    p_query.add_argument("--json", action="store_true", help="print the full envelope")
    p_query.add_argument("--config", default=None)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--config", default=None)

    p_eval = sub.add_parser("eval", help="evaluation suite")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True, parser_class=_Parser)

    p_metrics = eval_sub.add_parser("metrics", help="relevance/similarity/correctness")
    p_metrics.add_argument("--items", required=True, help="JSONL of evaluation items")
    p_metrics.add_argument("--judge-script", default=None, help="JSONL of judge outputs")
    p_metrics.add_argument("--n-questions", type=int, default=3)
    p_metrics.add_argument("--json", action="store_true")

    p_battles = eval_sub.add_parser("battles", help="Elo / MLE / bootstrap ratings")
    p_battles.add_argument("--file", required=True, help="JSONL of battle records")
    p_battles.add_argument("--rounds", type=int, default=1000)
    p_battles.add_argument("--seed", type=int, default=None)
    p_battles.add_argument("--k", type=float, default=4.0)

    p_failure = eval_sub.add_parser("failure", help="collective failure rate bound")
    p_failure.add_argument("--rates", required=True, help="comma-separated rates in [0,1]")
    p_failure.add_argument("--n", type=int, required=True, help="sample size for the bound")
    p_failure.add_argument("--z", type=float, default=1.96)

    return parser


def _stub_clients(config) -> dict:
    return {cfg.backend_id: make_client(cfg) for cfg in config.backends}


def _cmd_ingest(args) -> int:
    config = load_config(args.config)
    clients = _stub_clients(config)
    out = Path(args.out)
    part = ingest_source(args.kind, args.source, clients)
    if (out / "manifest.json").exists():
        kb = replace_partition(load_kb(out), part)
    else:
        kb = KnowledgeBase(kb_id=part.kb_id)
        kb = replace_partition(kb, part)
    persist_kb(kb, out)
    print(f"ingested {len(part.chunks)} chunks into {sorted(part.partitions())} at {out}")
    return EXIT_OK


def _cmd_query(args) -> int:
    from .service import build_engine  # deferred: fastapi import is heavy

    config = load_config(args.config)
    kb_dir = Path(args.kb)
    if not (kb_dir / "manifest.json").exists():
        print(f"error: no knowledge base at {kb_dir} (kb_root)", file=sys.stderr)
        return EXIT_RUNTIME
    engine = build_engine(config, kb=load_kb(kb_dir))
    envelope = engine.answer(args.text)
    if args.json:
        print(json.dumps(envelope.to_dict(kb=engine.kb), indent=2))
    else:
        print(envelope.answer_text)
        print(f"[path={envelope.path}]", file=sys.stderr)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceState, build_engine, create_app

    config = load_config(args.config)
    engine = None
    if (config.kb_root / "manifest.json").exists():
        engine = build_engine(config)
    state = ServiceState(config, engine)
    app = create_app(state)
    uvicorn.run(app, host=config.host, port=config.port)
    return EXIT_OK


def _read_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def _cmd_eval_metrics(args) -> int:
    config = load_config(None)
    clients = _stub_clients(config)
    items = [
        EvalItem(
            question=rec["question"],
            ground_truth=rec["ground_truth"],
            answers=dict(rec["answers"]),
            category=rec.get("category", "general"),
            item_id=str(rec.get("item_id", "")),
        )
        for rec in _read_jsonl(args.items)
    ]
    if args.judge_script:
        script = [rec["output"] for rec in _read_jsonl(args.judge_script)]
        judge_backend = ScriptedJudge(script)
    else:
        judge_backend = clients["judge"]
    per_model = evaluate_items(
        items,
        qgen=clients["question_gen"],
        embedder=clients["beta"],
        judge_backend=judge_backend,
        n_questions=args.n_questions,
    )
    report = build_report(per_model)
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(render_table(report))
    return EXIT_OK


def _cmd_eval_battles(args) -> int:
    battles = [
        BattleRecord(
            model_a=rec["model_a"],
            model_b=rec["model_b"],
            outcome=rec["outcome"],
            question_id=str(rec.get("question_id", "")),
        )
        for rec in _read_jsonl(args.file)
    ]
    if not battles:
        print("error: no battles in input file", file=sys.stderr)
        return EXIT_RUNTIME
    elo = elo_tournament(battles, k=args.k)
    fit = mle_elo_fit(battles)
    stats = bootstrap_elo(battles, rounds=args.rounds, seed=args.seed, k=args.k)
    print(f"{'Model':<20}{'Elo':>10}{'MLE Elo':>12}{'Bootstrap median (2.5%-97.5%)':>34}")
    for model in sorted(elo, key=elo.get, reverse=True):
        s = stats[model]
        flag = " (diverged)" if model in fit.diverged else ""
        print(
            f"{model:<20}{elo[model]:>10.1f}{fit.ratings[model]:>12.2f}"
            f"{s.median:>16.1f} ({s.p2_5:.1f}-{s.p97_5:.1f}){flag}"
        )
    return EXIT_OK


def _cmd_eval_failure(args) -> int:
    try:
        rates = [float(r) for r in args.rates.split(",") if r.strip()]
    except ValueError:
        print("error: --rates must be comma-separated numbers", file=sys.stderr)
        return EXIT_USAGE
    bound = failure_rate_ci(rates, n=args.n, z=args.z)
    print(f"collective failure probability: {bound.collective * 100:.5f}%")
    print(f"upper bound ({args.z} z, n={args.n}): {bound.upper * 100:.4f}%")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    handlers = {
        "ingest": _cmd_ingest,
        "query": _cmd_query,
        "serve": _cmd_serve,
    }
    try:
        if args.command == "eval":
            handler = {
                "metrics": _cmd_eval_metrics,
                "battles": _cmd_eval_battles,
                "failure": _cmd_eval_failure,
            }[args.eval_command]
            return handler(args)
        return handlers[args.command](args)
    except (KnowledgeBaseError, BackendError, GenerationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
