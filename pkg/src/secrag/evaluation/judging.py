"""LLM-as-judge protocols: reference-guided pairwise battles and 1-5 scoring."""

from __future__ import annotations

import re
from dataclasses import dataclass
from statistics import fmean
from string import Template
from typing import Sequence

from ..backends import Backend, judge
from .ratings import OUTCOME_A, OUTCOME_B, OUTCOME_TIE

PAIRWISE_JUDGE_TEMPLATE = Template(
    "Please act as an impartial judge and evaluate the quality of the responses "
    "provided by two AI assistants to the user question displayed below. Your "
    "evaluation should consider correctness and helpfulness. You will be given "
    "a reference answer, assistant A's answer, and assistant B's answer. Your "
    "job is to evaluate which assistant's answer is better. Begin your "
    "evaluation by comparing both assistants' answers with the reference "
    "answer. Identify and correct any mistakes. Avoid any position biases and "
    "ensure that the order in which the responses were presented does not "
    "influence your decision. Do not allow the length of the responses to "
    "influence your evaluation. Do not favor certain names of the assistants. "
    "Be as objective as possible. After providing your explanation, output "
    'your final verdict by strictly following this format: "[A]" if assistant '
    'A is better, "[B]" if assistant B is better, and "[C]" for a tie.\n'
    "\n"
    "[User Question]\n"
    "$question\n"
    "\n"
    "[The Start of Reference Answer]\n"
    "$reference\n"
    "[The End of Reference Answer]\n"
    "\n"
    "[The Start of Assistant A's Answer]\n"
    "$answer_a\n"
    "[The End of Assistant A's Answer]\n"
    "\n"
    "[The Start of Assistant B's Answer]\n"
    "$answer_b\n"
    "[The End of Assistant B's Answer]\n"
)

FIVE_LEVEL_TEMPLATE = Template(
    "Task Description:\n"
    "A Question, a response to evaluate, a reference answer that gets a score "
    "of 5, and a score rubric representing a evaluation criteria are given.\n"
    "1. Write a detailed feedback that assess the quality of the response "
    "strictly based on the given score rubric, not evaluating in general.\n"
    "2. After writing a feedback, write a score that is an integer between 1 "
    "and 5. You should refer to the score rubric.\n"
    '3. The output format should look as follows: "Feedback: {{write a '
    'feedback for criteria}} [RESULT] {{an integer number between 1 and 5}}"\n'
    "4. Please do not generate any other opening, closing, and explanations. "
    "Be sure to include [RESULT] in your output.\n"
    "\n"
    "Score Rubrics:\n"
    "Is the response correct, accurate, and factual based on the reference answer?\n"
    "Score 1: The response is completely incorrect, inaccurate, and/or not factual.\n"
    "Score 2: The response is mostly incorrect, inaccurate, and/or not factual.\n"
    "Score 3: The response is somewhat correct, accurate, and/or factual.\n"
    "Score 4: The response is mostly correct, accurate, and factual.\n"
    "Score 5: The response is completely correct, accurate, and factual.\n"
    "\n"
    "The Question: $question\n"
    "Response to evaluate: $response\n"
    "Reference Answer (Score 5): $reference\n"
)

_VERDICT_RE = re.compile(r"\[([ABC])\]")
_RESULT_RE = re.compile(r"\[RESULT\]\s*(-?\d+)")


class JudgeParseError(Exception):
    """No usable verdict in the judge's output; raw output retained."""

    def __init__(self, message: str, raw_output: str = ""):
        super().__init__(message)
        self.raw_output = raw_output


@dataclass(frozen=True)
class PairwiseVerdict:
    outcome: str  # which of A/B/tie, after any debiasing
    first_pass: str
    swapped_pass: str | None = None


def render_pairwise_prompt(
    question: str, reference: str, answer_a: str, answer_b: str
) -> str:
    return PAIRWISE_JUDGE_TEMPLATE.substitute(
        question=question, reference=reference, answer_a=answer_a, answer_b=answer_b
    )


def _parse_verdict(raw: str) -> str:
    matches = _VERDICT_RE.findall(raw)
    if not matches:
        raise JudgeParseError("no [A]/[B]/[C] verdict token found", raw_output=raw)
    return {"A": OUTCOME_A, "B": OUTCOME_B, "C": OUTCOME_TIE}[matches[-1]]


def pairwise_judge(
    question: str,
    reference: str,
    answer_a: str,
    answer_b: str,
    judge_backend: Backend,
) -> str:
    """One battle: render the comparison prompt, parse the terminal verdict."""
    raw = judge(judge_backend, render_pairwise_prompt(question, reference, answer_a, answer_b))
    return _parse_verdict(raw)


def pairwise_judge_debiased(
    question: str,
    reference: str,
    answer_a: str,
    answer_b: str,
    judge_backend: Backend,
) -> PairwiseVerdict:
    """Judge both presentation orders; disagreement resolves to a tie."""
    first = pairwise_judge(question, reference, answer_a, answer_b, judge_backend)
    swapped_raw = pairwise_judge(question, reference, answer_b, answer_a, judge_backend)
    swapped = {OUTCOME_A: OUTCOME_B, OUTCOME_B: OUTCOME_A, OUTCOME_TIE: OUTCOME_TIE}[
        swapped_raw
    ]
    outcome = first if first == swapped else OUTCOME_TIE
    return PairwiseVerdict(outcome=outcome, first_pass=first, swapped_pass=swapped)


def five_level_score(
    question: str, reference: str, answer: str, judge_backend: Backend
) -> int:
    """Score 1-5 against a reference answer that anchors the top score."""
    prompt = FIVE_LEVEL_TEMPLATE.substitute(
        question=question, response=answer, reference=reference
    )
    raw = judge(judge_backend, prompt)
    match = None
    for match in _RESULT_RE.finditer(raw):
        pass
    if match is None:
        raise JudgeParseError("no [RESULT] token found", raw_output=raw)
    score = int(match.group(1))
    if not 1 <= score <= 5:
        raise JudgeParseError(f"score {score} outside 1..5", raw_output=raw)
    return score


def mean_score(scores: Sequence[int]) -> float:
    if not scores:
        raise ValueError("no scores to average")
    return fmean(scores)
