"""Evaluation suite: answer metrics, judge protocols, ratings, failure analysis."""

from .judging import (
    FIVE_LEVEL_TEMPLATE,
    PAIRWISE_JUDGE_TEMPLATE,
    JudgeParseError,
    PairwiseVerdict,
    five_level_score,
    mean_score,
    pairwise_judge,
    pairwise_judge_debiased,
    render_pairwise_prompt,
)
from .metrics import (
    EvalItem,
    MetricReport,
    StatementCounts,
    StatementExtractionError,
    answer_correctness,
    answer_relevance,
    answer_similarity,
    classify_statements,
    cohens_kappa,
    cve_accuracy,
    default_cve_matcher,
    distinctive_phrase,
    factual_correctness,
)
from .ratings import (
    BattleRecord,
    BootstrapStats,
    FailureRateBound,
    MleFit,
    RatingTable,
    bootstrap_elo,
    elo_tournament,
    elo_update,
    expected_score,
    failure_rate_ci,
    mle_elo,
    mle_elo_fit,
)
from .report import build_report, evaluate_items, render_table

__all__ = [
    "BattleRecord",
    "BootstrapStats",
    "EvalItem",
    "FailureRateBound",
    "FIVE_LEVEL_TEMPLATE",
    "JudgeParseError",
    "MetricReport",
    "MleFit",
    "PAIRWISE_JUDGE_TEMPLATE",
    "PairwiseVerdict",
    "RatingTable",
    "StatementCounts",
    "StatementExtractionError",
    "answer_correctness",
    "answer_relevance",
    "answer_similarity",
    "bootstrap_elo",
    "build_report",
    "classify_statements",
    "cohens_kappa",
    "cve_accuracy",
    "default_cve_matcher",
    "distinctive_phrase",
    "elo_tournament",
    "elo_update",
    "evaluate_items",
    "expected_score",
    "factual_correctness",
    "failure_rate_ci",
    "five_level_score",
    "mean_score",
    "mle_elo",
    "mle_elo_fit",
    "pairwise_judge",
    "pairwise_judge_debiased",
    "render_pairwise_prompt",
    "render_table",
]
