"""Pairwise-comparison ratings: linear Elo, MLE logistic fit, bootstrap CIs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

ELO_INITIAL = 1000.0
ELO_K = 4.0
ELO_SCALE = 400.0 / math.log(10.0)  # natural-log coefficients -> Elo points

OUTCOME_A, OUTCOME_B, OUTCOME_TIE = "A", "B", "tie"


@dataclass(frozen=True)
class BattleRecord:
    model_a: str
    model_b: str
    outcome: str  # A | B | tie
    question_id: str = ""

    def __post_init__(self) -> None:
        if self.model_a == self.model_b:
            raise ValueError("a model cannot battle itself")
        if self.outcome not in (OUTCOME_A, OUTCOME_B, OUTCOME_TIE):
            raise ValueError(f"unknown outcome {self.outcome!r}")


@dataclass(frozen=True)
class BootstrapStats:
    median: float
    p2_5: float
    p97_5: float

    def __post_init__(self) -> None:
        if not (self.p2_5 <= self.median <= self.p97_5):
            raise ValueError("bootstrap percentiles out of order")


@dataclass
class RatingTable:
    elo: dict[str, float] = field(default_factory=dict)
    mle_elo: dict[str, float] = field(default_factory=dict)
    bootstrap: dict[str, BootstrapStats] = field(default_factory=dict)


@dataclass(frozen=True)
class MleFit:
    ratings: dict[str, float]
    converged: bool
    iterations: int
    diverged: frozenset[str] = frozenset()


def expected_score(r_a: float, r_b: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / 400.0))


def elo_update(
    r_a: float, r_b: float, outcome: str, k: float = ELO_K
) -> tuple[float, float]:
    """One linear update R' = R + K * (S - E); ties score 0.5 for both sides."""
    if k <= 0:
        raise ValueError("k must be positive")
    s_a = {OUTCOME_A: 1.0, OUTCOME_B: 0.0, OUTCOME_TIE: 0.5}[outcome]
    e_a = expected_score(r_a, r_b)
    return r_a + k * (s_a - e_a), r_b + k * ((1.0 - s_a) - (1.0 - e_a))


def elo_tournament(
    battles: Sequence[BattleRecord],
    initial: float = ELO_INITIAL,
    k: float = ELO_K,
    models: Iterable[str] = (),
) -> dict[str, float]:
    """Sequential updates in the given battle order, everyone starting equal."""
    if not battles and not models:
        raise ValueError("no battles given")
    ratings: dict[str, float] = {m: initial for m in models}
    for battle in battles:
        ratings.setdefault(battle.model_a, initial)
        ratings.setdefault(battle.model_b, initial)
        ratings[battle.model_a], ratings[battle.model_b] = elo_update(
            ratings[battle.model_a], ratings[battle.model_b], battle.outcome, k
        )
    return ratings


def _win_records(battles: Sequence[BattleRecord]) -> dict[tuple[str, str], float]:
    """Aggregate (winner, loser) -> weight; a tie is half a win each way."""
    weights: dict[tuple[str, str], float] = {}

    def add(winner: str, loser: str, w: float) -> None:
        key = (winner, loser)
        weights[key] = weights.get(key, 0.0) + w

    for battle in battles:
        if battle.outcome == OUTCOME_A:
            add(battle.model_a, battle.model_b, 1.0)
        elif battle.outcome == OUTCOME_B:
            add(battle.model_b, battle.model_a, 1.0)
        else:
            add(battle.model_a, battle.model_b, 0.5)
            add(battle.model_b, battle.model_a, 0.5)
    return weights


def mle_elo_fit(
    battles: Sequence[BattleRecord],
    base: float = ELO_INITIAL,
    tol: float = 1e-8,
    max_iter: int = 500_000,
    rating_cap: float = 3000.0,
) -> MleFit:
    """Unregularized maximum-likelihood logistic fit of all battles at once.

    Gradient ascent on zero-mean coefficients; converged when the largest
    coefficient step drops below tol. Perfectly separated data cannot
    converge: affected models are clamped at the rating cap and flagged.
    """
    if not battles:
        raise ValueError("no battles given")
    models = sorted({m for b in battles for m in (b.model_a, b.model_b)})
    model_index = {m: i for i, m in enumerate(models)}
    records = _win_records(battles)
    winners = np.array([model_index[w] for (w, _l) in records], dtype=np.intp)
    losers = np.array([model_index[l] for (_w, l) in records], dtype=np.intp)
    weights = np.array(list(records.values()), dtype=np.float64)

    n_models = len(models)
    per_model_weight = np.bincount(winners, weights, minlength=n_models)
    per_model_weight += np.bincount(losers, weights, minlength=n_models)
    lr = 4.0 / float(per_model_weight.max())

    beta = np.zeros(n_models, dtype=np.float64)
    cap_beta = (rating_cap - base) / ELO_SCALE
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        p = 1.0 / (1.0 + np.exp(-(beta[winners] - beta[losers])))
        pull = weights * (1.0 - p)
        grad = np.bincount(winners, pull, minlength=n_models) - np.bincount(
            losers, pull, minlength=n_models
        )
        step = lr * grad
        beta += step
        beta -= beta.mean()
        if float(np.max(np.abs(step))) < tol:
            converged = True
            break
        if float(np.max(np.abs(beta))) > cap_beta:
            break

    diverged = frozenset(
        models[i] for i in range(n_models) if abs(beta[i]) > cap_beta
    )
    beta = np.clip(beta, -cap_beta, cap_beta)
    ratings = {m: base + ELO_SCALE * float(beta[model_index[m]]) for m in models}
    return MleFit(
        ratings=ratings,
        converged=converged,
        iterations=iterations,
        diverged=diverged,
    )


def mle_elo(battles: Sequence[BattleRecord], base: float = ELO_INITIAL) -> dict[str, float]:
    return mle_elo_fit(battles, base=base).ratings


def bootstrap_elo(
    battles: Sequence[BattleRecord],
    rounds: int = 1000,
    seed: Optional[int] = None,
    initial: float = ELO_INITIAL,
    k: float = ELO_K,
) -> dict[str, BootstrapStats]:
    """Resample battles with replacement, rate each round, report percentiles."""
    if rounds < 2:
        raise ValueError("rounds must be >= 2")
    if not battles:
        raise ValueError("no battles given")
    models = sorted({m for b in battles for m in (b.model_a, b.model_b)})
    rng = np.random.default_rng(seed)
    n = len(battles)
    samples = np.empty((rounds, len(models)), dtype=np.float64)
    for r in range(rounds):
        indices = rng.integers(0, n, size=n)
        ratings = elo_tournament(
            [battles[i] for i in indices], initial=initial, k=k, models=models
        )
        samples[r] = [ratings[m] for m in models]
    stats: dict[str, BootstrapStats] = {}
    for j, model in enumerate(models):
        p2_5, median, p97_5 = np.percentile(samples[:, j], [2.5, 50.0, 97.5])
        stats[model] = BootstrapStats(float(median), float(p2_5), float(p97_5))
    return stats


@dataclass(frozen=True)
class FailureRateBound:
    collective: float
    upper: float


def failure_rate_ci(rates: Sequence[float], n: int, z: float = 1.96) -> FailureRateBound:
    """Collective failure probability (product of per-retriever rates) and its
    normal-approximation upper bound p + z * sqrt(p * (1 - p) / n)."""
    if not rates:
        raise ValueError("at least one rate is required")
    if any(not 0.0 <= r <= 1.0 for r in rates):
        raise ValueError("rates must lie in [0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    collective = math.prod(rates)
    upper = collective + z * math.sqrt(collective * (1.0 - collective) / n)
    return FailureRateBound(collective=collective, upper=upper)
