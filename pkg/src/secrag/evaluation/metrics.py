"""Answer-quality metrics: relevance, similarity, correctness, CVE accuracy, kappa."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from statistics import fmean
from typing import Callable, Optional, Sequence

from ..backends import Backend, embed, generate_questions, judge
from ..index import cosine_similarity

WEIGHT_FACTUAL = 0.75
WEIGHT_SEMANTIC = 0.25

EVAL_CATEGORIES = ("general", "multihop", "cve")

STATEMENT_EXTRACTION_INSTRUCTION = (
    'Extract the following from the given question and ground truth: '
    '"TP": statements that are present in both the answer and the ground truth, '
    '"FP": statements present in the answer but not found in the ground truth, '
    '"FN": relevant statements found in the ground truth but omitted in the answer'
)

_VULN_TOKEN_RE = re.compile(r"(?:CVE-\d{4}-\d{4,7}|CWE-\d{1,5})$", re.IGNORECASE)
_CAP_TOKEN_RE = re.compile(r"[A-Z0-9][\w-]*")
_JSON_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)\n\s*```", re.DOTALL)

_PHRASE_STOPWORDS = frozenset(
    "a an the this that it its is are was were and or of in on at to for".split()
)


class StatementExtractionError(Exception):
    """Judge output could not be parsed; raw output retained for debugging."""

    def __init__(self, message: str, raw_output: str = ""):
        super().__init__(message)
        self.raw_output = raw_output


@dataclass(frozen=True)
class StatementCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("statement counts must be non-negative")


@dataclass(frozen=True)
class EvalItem:
    question: str
    ground_truth: str
    answers: dict[str, str]
    category: str = "general"
    item_id: str = ""

    def __post_init__(self) -> None:
        if not self.ground_truth:
            raise ValueError("ground_truth must be non-empty")
        if not self.answers:
            raise ValueError("at least one answer is required")
        if self.category not in EVAL_CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")


@dataclass(frozen=True)
class MetricReport:
    relevance: float
    similarity: float
    correctness: float
    factual_correctness: float
    semantic_similarity: float
    accuracy_flag: Optional[bool] = None


def answer_relevance(
    question: str,
    answer: str,
    qgen: Backend,
    embedder: Backend,
    n: int = 3,
) -> float:
    """Mean cosine between the original question and n questions generated
    back from the answer."""
    if n < 1:
        raise ValueError("n must be >= 1")
    generated = generate_questions(qgen, answer, n)
    vectors = embed(embedder, [question] + list(generated))
    original, rest = vectors[0], vectors[1:]
    return fmean(cosine_similarity(v, original) for v in rest)


def answer_similarity(ground_truth: str, generated: str, embedder: Backend) -> float:
    if not ground_truth or not generated:
        raise ValueError("both answers must be non-empty")
    gt_vec, gen_vec = embed(embedder, [ground_truth, generated])
    return cosine_similarity(gt_vec, gen_vec)


def _strip_fences(text: str) -> str:
    match = _JSON_FENCE_RE.search(text)
    return match.group(1) if match else text


def classify_statements(ground_truth: str, answer: str, judge_backend: Backend) -> StatementCounts:
    """Ask the judge to bucket statements into TP/FP/FN and count them."""
    prompt = (
        f"{STATEMENT_EXTRACTION_INSTRUCTION}\n\n"
        f"Ground truth:\n{ground_truth}\n\n"
        f"Answer:\n{answer}\n\n"
        'Respond with JSON of the form {"TP": [...], "FP": [...], "FN": [...]}.'
    )
    raw = judge(judge_backend, prompt)
    try:
        data = json.loads(_strip_fences(raw))
        lowered = {k.lower(): v for k, v in data.items()}
        return StatementCounts(
            tp=len(lowered["tp"]), fp=len(lowered["fp"]), fn=len(lowered["fn"])
        )
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        raise StatementExtractionError(
            f"unparseable statement classification: {exc}", raw_output=raw
        ) from exc


def factual_correctness(counts: StatementCounts) -> float:
    """F1-style score: tp / (tp + 0.5 * (fp + fn))."""
    if counts.tp == 0 and counts.fp == 0 and counts.fn == 0:
        raise ValueError("factual correctness undefined for all-zero counts")
    return counts.tp / (counts.tp + 0.5 * (counts.fp + counts.fn))


def answer_correctness(counts: StatementCounts, ss: float) -> float:
    """Weighted blend: 0.75 * factual correctness + 0.25 * semantic similarity."""
    if not -1.0 <= ss <= 1.0:
        raise ValueError("semantic similarity must lie in [-1, 1]")
    clamped = min(max(ss, 0.0), 1.0)
    return WEIGHT_FACTUAL * factual_correctness(counts) + WEIGHT_SEMANTIC * clamped


def distinctive_phrase(ground_truth: str) -> Optional[str]:
    """Longest run of >=2 capitalized/digit-bearing tokens, vuln ids excluded."""
    best: Optional[str] = None
    best_len = 0
    tokens = list(_CAP_TOKEN_RE.finditer(ground_truth))
    run: list[re.Match] = []

    def flush() -> None:
        nonlocal best, best_len
        cleaned = [
            m for m in run
            if m.group(0).lower() not in _PHRASE_STOPWORDS
            and not _VULN_TOKEN_RE.match(m.group(0))
        ]
        if len(cleaned) >= 2 and len(cleaned) > best_len:
            best = ground_truth[cleaned[0].start() : cleaned[-1].end()]
            best_len = len(cleaned)

    for match in tokens:
        if run and not ground_truth[run[-1].end() : match.start()].isspace():
            flush()
            run = []
        run.append(match)
    flush()
    return best


def default_cve_matcher(item: EvalItem, answer: str) -> bool:
    """Correct iff the ground truth's distinctive subject appears in the answer.

    Falls back to requiring the ground-truth CVE id when the ground truth has
    no multi-token capitalized subject to pin the vulnerability down.
    """
    phrase = distinctive_phrase(item.ground_truth)
    if phrase is not None:
        return _normalize(phrase) in _normalize(answer)
    ids = re.findall(r"CVE-\d{4}-\d{4,7}", item.ground_truth, re.IGNORECASE)
    return any(vid.upper() in answer.upper() for vid in ids)


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def cve_accuracy(
    items: Sequence[EvalItem],
    model_id: Optional[str] = None,
    matcher: Optional[Callable[[EvalItem, str], bool]] = None,
) -> float:
    """Fraction of CVE items whose answer identifies the right vulnerability."""
    if not items:
        raise ValueError("cve_accuracy requires at least one item")
    matcher = matcher or default_cve_matcher
    correct = 0
    for item in items:
        if model_id is not None:
            answer = item.answers[model_id]
        elif len(item.answers) == 1:
            answer = next(iter(item.answers.values()))
        else:
            raise ValueError("model_id required when items carry several answers")
        if matcher(item, answer):
            correct += 1
    return correct / len(items)


def cohens_kappa(labels_a: Sequence[str], labels_b: Sequence[str]) -> float:
    """Chance-corrected agreement between two equal-length label lists."""
    if len(labels_a) != len(labels_b) or not labels_a:
        raise ValueError("label lists must be non-empty and equally long")
    n = len(labels_a)
    observed = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    alphabet = set(labels_a) | set(labels_b)
    expected = sum(
        (labels_a.count(label) / n) * (labels_b.count(label) / n)
        for label in alphabet
    )
    if expected == 1.0:
        raise ValueError("degenerate marginals: expected agreement is 1")
    return (observed - expected) / (1.0 - expected)
