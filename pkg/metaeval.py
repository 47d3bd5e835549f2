#!/usr/bin/env python3
"""
Meta-evaluation for nuggetprobe
Leaderboards, Kendall's tau-b and tau@k against a reference ranking,
paired t-tests and relative improvements over a base variant
"""

import csv
import io
import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy import stats

from errors import StatisticsError, ValidationError
from evaluator import METRICS, RunEval

logger = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.05
_ZERO_VARIANCE_EPS = 1e-12


class LeaderboardEntry(BaseModel):
    system: str
    variant: str
    score: float
    rank: int

    @property
    def key(self) -> str:
        return system_key(self.system, self.variant)


class Leaderboard(BaseModel):
    metric: str
    entries: List[LeaderboardEntry] = Field(default_factory=list)

    def scores(self) -> Dict[str, float]:
        return {entry.key: entry.score for entry in self.entries}


class TTestResult(BaseModel):
    t: float
    p: float
    n: int
    mean_difference: float
    zero_variance: bool = False

    @property
    def significant(self) -> bool:
        return self.p < SIGNIFICANCE_LEVEL


class Comparison(BaseModel):
    """One variant against its base on one metric"""

    system: str
    variant: str
    metric: str
    base: Optional[float]
    score: Optional[float]
    improvement_pct: Optional[float]
    mean_difference: Optional[float] = None
    # None when the differences are constant; mean_difference carries the direction
    t: Optional[float] = None
    p: Optional[float] = None
    zero_variance: bool = False
    significant: bool = False


class AgreementResult(BaseModel):
    metric: str
    n_systems: int
    tau: Optional[float]
    tau_at_k: Dict[int, Optional[float]] = Field(default_factory=dict)


class MetaEvalResult(BaseModel):
    metrics: Dict[str, AgreementResult] = Field(default_factory=dict)
    comparisons: List[Comparison] = Field(default_factory=list)
    excluded: List[str] = Field(default_factory=list)


def system_key(system: str, variant: str) -> str:
    """Leaderboard key: the system name, qualified by variant unless it is the base run"""
    return system if variant in ('', 'base') else f"{system}/{variant}"


def kendall_tau(scores_a: Dict[str, float], scores_b: Dict[str, float]) -> float:
    """
    Kendall's tau-b between two score maps over the same systems

    Args:
        scores_a: system -> score
        scores_b: system -> score (same key set)

    Returns:
        tau-b in [-1, 1]
    """
    if set(scores_a) != set(scores_b):
        only_a = sorted(set(scores_a) - set(scores_b))
        only_b = sorted(set(scores_b) - set(scores_a))
        raise StatisticsError(f"Score maps cover different systems (only in first: {only_a}, only in second: {only_b})")
    if len(scores_a) < 2:
        raise StatisticsError("Kendall's tau needs at least 2 systems")

    systems = sorted(scores_a)
    tau, _ = stats.kendalltau([scores_a[s] for s in systems], [scores_b[s] for s in systems], variant='b')
    if tau is None or math.isnan(tau):
        raise StatisticsError("Kendall's tau is undefined when every score in a ranking is tied")
    return float(tau)


def tau_at_k(auto_scores: Dict[str, float], manual_scores: Dict[str, float], k: int) -> float:
    """
    Kendall's tau over the top-k systems of the manual ranking

    Systems tied with the k-th manual score are included.
    """
    if k < 2:
        raise StatisticsError(f"tau@k needs k >= 2 (got {k})")
    if set(auto_scores) != set(manual_scores):
        raise StatisticsError("Automatic and manual scores cover different systems")

    ordered = sorted(manual_scores.values(), reverse=True)
    if k < len(ordered):
        cutoff = ordered[k - 1]
        keep = [s for s, score in manual_scores.items() if score >= cutoff]
    else:
        keep = list(manual_scores)
    if len(keep) < 2:
        raise StatisticsError(f"Fewer than 2 systems in the top {k}")

    return kendall_tau({s: auto_scores[s] for s in keep}, {s: manual_scores[s] for s in keep})


def paired_t_test(per_topic_a: Sequence[float], per_topic_b: Sequence[float]) -> TTestResult:
    """
    Two-sided paired Student's t-test on the differences a - b

    Args:
        per_topic_a: Scores of the first system, paired by topic
        per_topic_b: Scores of the second system

    Returns:
        TTestResult; all-zero differences give t=0, p=1; constant nonzero
        differences give p=0 with zero_variance set
    """
    a = np.asarray(per_topic_a, dtype=float)
    b = np.asarray(per_topic_b, dtype=float)
    if a.shape != b.shape:
        raise StatisticsError(f"Paired samples differ in length ({len(a)} vs {len(b)})")
    if len(a) < 2:
        raise StatisticsError("Paired t-test needs at least 2 topics")

    diffs = a - b
    mean = float(np.mean(diffs))
    if np.all(diffs == 0):
        return TTestResult(t=0.0, p=1.0, n=len(diffs), mean_difference=0.0)

    sd = float(np.std(diffs, ddof=1))
    if sd <= _ZERO_VARIANCE_EPS * max(1.0, abs(mean)):
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, n=len(diffs),
                           mean_difference=mean, zero_variance=True)

    result = stats.ttest_rel(a, b)
    return TTestResult(t=float(result.statistic), p=float(result.pvalue), n=len(diffs), mean_difference=mean)


def relative_improvement(base_score: Optional[float], variant_score: Optional[float]) -> Optional[float]:
    """100 * (variant - base) / base; None when base is missing or not positive"""
    if base_score is None or variant_score is None:
        return None
    if base_score <= 0:
        logger.warning(f"⚠️ Relative improvement undefined for base score {base_score}")
        return None
    return 100.0 * (variant_score - base_score) / base_score


def build_leaderboard(run_evals: Sequence[RunEval], metric: str) -> Leaderboard:
    """
    Rank run evaluations by a macro metric

    Equal scores share the smallest rank; exact ties are ordered by system name.
    """
    if metric not in METRICS:
        raise ValidationError(f"Unknown metric {metric!r} (choose from {', '.join(METRICS)})")
    if not run_evals:
        raise StatisticsError("Leaderboard needs at least one run evaluation")

    scored = []
    for run_eval in run_evals:
        score = run_eval.macro.get(metric)
        if score is None:
            logger.warning(f"⚠️ {run_eval.system}/{run_eval.variant}: {metric} undefined, left off the leaderboard")
            continue
        scored.append((score, run_eval.system, run_eval.variant))
    scored.sort(key=lambda item: (-item[0], item[1], item[2]))

    entries = []
    for position, (score, system, variant) in enumerate(scored, start=1):
        rank = entries[-1].rank if entries and entries[-1].score == score else position
        entries.append(LeaderboardEntry(system=system, variant=variant, score=score, rank=rank))
    return Leaderboard(metric=metric, entries=entries)


def compare(base: RunEval, variant: RunEval, metric: str) -> Comparison:
    """Relative improvement and paired t-test of a variant over its base on one metric"""
    base_score, score = base.macro.get(metric), variant.macro.get(metric)
    comparison = Comparison(system=variant.system, variant=variant.variant, metric=metric, base=base_score,
                            score=score, improvement_pct=relative_improvement(base_score, score))

    base_topics, variant_topics = base.per_topic(metric), variant.per_topic(metric)
    shared = sorted(t for t in base_topics
                    if base_topics[t] is not None and variant_topics.get(t) is not None)
    if len(shared) < 2:
        return comparison

    test = paired_t_test([variant_topics[t] for t in shared], [base_topics[t] for t in shared])
    return comparison.model_copy(update={
        'mean_difference': test.mean_difference, 't': test.t if math.isfinite(test.t) else None,
        'p': test.p, 'zero_variance': test.zero_variance, 'significant': test.significant,
    })


def run_metaeval(run_evals: Sequence[RunEval], manual_scores: Dict[str, float], ks: Sequence[int]) -> MetaEvalResult:
    """
    Agreement of every automatic leaderboard with the manual one, plus
    base-vs-variant comparisons for systems evaluated in several variants

    Args:
        run_evals: Evaluated runs
        manual_scores: system key -> manual score
        ks: Cutoffs for tau@k

    Returns:
        MetaEvalResult
    """
    result = MetaEvalResult()
    auto_keys = {system_key(r.system, r.variant) for r in run_evals}
    excluded = sorted(auto_keys ^ set(manual_scores))
    if excluded:
        logger.warning(f"⚠️ Systems on only one side of the comparison, excluded: {', '.join(excluded)}")
    result.excluded = excluded
    shared = auto_keys & set(manual_scores)
    if len(shared) < 2:
        raise StatisticsError(f"Meta-evaluation needs at least 2 systems with both scores (have {len(shared)})")

    for metric in METRICS:
        auto = {k: v for k, v in build_leaderboard(run_evals, metric).scores().items() if k in shared}
        manual = {k: manual_scores[k] for k in auto}
        agreement = AgreementResult(metric=metric, n_systems=len(auto), tau=None)
        try:
            agreement.tau = kendall_tau(auto, manual)
            for k in ks:
                agreement.tau_at_k[k] = tau_at_k(auto, manual, k)
        except StatisticsError as e:
            logger.warning(f"⚠️ {metric}: {e}")
        result.metrics[metric] = agreement

    bases = {r.system: r for r in run_evals if r.variant in ('', 'base')}
    for run_eval in run_evals:
        base = bases.get(run_eval.system)
        if base is None or run_eval is base:
            continue
        for metric in METRICS:
            result.comparisons.append(compare(base, run_eval, metric))

    return result


def leaderboards_to_csv(leaderboards: Sequence[Leaderboard]) -> str:
    """leaderboard.csv body: system,variant,metric,score,rank"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['system', 'variant', 'metric', 'score', 'rank'])
    for board in leaderboards:
        for entry in board.entries:
            writer.writerow([entry.system, entry.variant, board.metric, repr(entry.score), entry.rank])
    return buffer.getvalue()


def read_manual_scores(text: str) -> Dict[str, float]:
    """Parse a manual leaderboard CSV with columns system,score (header required)"""
    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames or 'system' not in reader.fieldnames or 'score' not in reader.fieldnames:
        raise ValidationError("Manual scores CSV needs 'system' and 'score' columns")
    scores = {}
    for row in reader:
        try:
            scores[row['system']] = float(row['score'])
        except (TypeError, ValueError):
            raise ValidationError(f"Manual score for {row.get('system')!r} is not a number")
    return scores
