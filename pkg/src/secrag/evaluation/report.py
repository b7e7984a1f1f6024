"""Per-model aggregation of metrics and ratings into JSON and text tables."""

from __future__ import annotations

from statistics import fmean, pstdev
from typing import Optional, Sequence

from ..backends import Backend
from .metrics import (
    EvalItem,
    MetricReport,
    answer_correctness,
    answer_relevance,
    answer_similarity,
    classify_statements,
    default_cve_matcher,
    factual_correctness,
)
from .ratings import RatingTable


def evaluate_items(
    items: Sequence[EvalItem],
    qgen: Backend,
    embedder: Backend,
    judge_backend: Backend,
    n_questions: int = 3,
) -> dict[str, list[MetricReport]]:
    """Score every (item, model) pair; models are visited in sorted order so
    scripted judges see a deterministic call sequence."""
    per_model: dict[str, list[MetricReport]] = {}
    for item in items:
        for model in sorted(item.answers):
            answer = item.answers[model]
            relevance = answer_relevance(item.question, answer, qgen, embedder, n_questions)
            similarity = answer_similarity(item.ground_truth, answer, embedder)
            counts = classify_statements(item.ground_truth, answer, judge_backend)
            correctness = answer_correctness(counts, similarity)
            accuracy_flag = (
                default_cve_matcher(item, answer) if item.category == "cve" else None
            )
            per_model.setdefault(model, []).append(
                MetricReport(
                    relevance=relevance,
                    similarity=similarity,
                    correctness=correctness,
                    factual_correctness=factual_correctness(counts),
                    semantic_similarity=similarity,
                    accuracy_flag=accuracy_flag,
                )
            )
    return per_model


def _mean_std(values: Sequence[float]) -> dict[str, float]:
    return {
        "mean": fmean(values),
        "std": pstdev(values) if len(values) > 1 else 0.0,
    }


def build_report(
    per_model: dict[str, list[MetricReport]],
    ratings: Optional[RatingTable] = None,
) -> dict:
    report: dict = {"per_model": {}}
    for model in sorted(per_model):
        reports = per_model[model]
        flags = [r.accuracy_flag for r in reports if r.accuracy_flag is not None]
        entry: dict = {
            "relevance": _mean_std([r.relevance for r in reports]),
            "similarity": _mean_std([r.similarity for r in reports]),
            "correctness": _mean_std([r.correctness for r in reports]),
            "accuracy": (sum(flags) / len(flags)) if flags else None,
            "n_items": len(reports),
        }
        if ratings is not None:
            entry["elo"] = ratings.elo.get(model)
            entry["mle_elo"] = ratings.mle_elo.get(model)
            stats = ratings.bootstrap.get(model)
            entry["bootstrap"] = (
                {"median": stats.median, "p2_5": stats.p2_5, "p97_5": stats.p97_5}
                if stats
                else None
            )
        report["per_model"][model] = entry
    return report


def render_table(report: dict) -> str:
    """Plain-text table, one row per model."""
    header = (
        f"{'Model':<22}{'Relev. mu':>10}{'sd':>7}{'Simil. mu':>10}{'sd':>7}"
        f"{'Corr. mu':>10}{'sd':>7}{'Acc.':>7}{'Elo':>8}{'MLE Elo':>9}"
        f"{'Bootstrap (2.5-97.5)':>24}"
    )
    lines = [header, "-" * len(header)]
    for model, entry in report["per_model"].items():
        accuracy = entry.get("accuracy")
        bootstrap = entry.get("bootstrap")
        lines.append(
            f"{model:<22}"
            f"{entry['relevance']['mean']:>10.3f}{entry['relevance']['std']:>7.3f}"
            f"{entry['similarity']['mean']:>10.3f}{entry['similarity']['std']:>7.3f}"
            f"{entry['correctness']['mean']:>10.3f}{entry['correctness']['std']:>7.3f}"
            + (f"{accuracy:>7.2f}" if accuracy is not None else f"{'-':>7}")
            + (
                f"{entry['elo']:>8.0f}"
                if entry.get("elo") is not None
                else f"{'-':>8}"
            )
            + (
                f"{entry['mle_elo']:>9.1f}"
                if entry.get("mle_elo") is not None
                else f"{'-':>9}"
            )
            + (
                f"  {bootstrap['median']:.1f} ({bootstrap['p2_5']:.0f}-{bootstrap['p97_5']:.0f})"
                if bootstrap
                else f"{'-':>24}"
            )
        )
    return "\n".join(lines)
