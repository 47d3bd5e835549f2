#!/usr/bin/env python3
"""Tests for leaderboards, rank correlation and significance statistics"""

import itertools
import math

import pytest
from scipy import special

from errors import StatisticsError, ValidationError
from evaluator import RunEval, TopicEval
from metaeval import (
    build_leaderboard, compare, kendall_tau, leaderboards_to_csv, paired_t_test,
    read_manual_scores, relative_improvement, run_metaeval, system_key, tau_at_k,
)


def brute_force_tau_b(a, b):
    """Tau-b by explicit enumeration of all pairs"""
    concordant = discordant = ties_a = ties_b = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        da, db = a[i] - a[j], b[i] - b[j]
        if da == 0 and db == 0:
            continue
        if da == 0:
            ties_a += 1
        elif db == 0:
            ties_b += 1
        elif da * db > 0:
            concordant += 1
        else:
            discordant += 1
    return (concordant - discordant) / math.sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b))


def reference_t_test(diffs):
    """Student's t on paired differences with the p-value from the regularized incomplete beta"""
    n = len(diffs)
    mean = sum(diffs) / n
    sd = math.sqrt(sum((d - mean) ** 2 for d in diffs) / (n - 1))
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    p = special.betainc(df / 2, 0.5, df / (df + t * t))
    return t, p


def _as_map(scores):
    return {f"s{i}": score for i, score in enumerate(scores)}


def _run_eval(system, variant='base', **macro):
    return RunEval(system=system, variant=variant, macro=macro)


# ---------------------------------------------------------------------------
# Kendall's tau
# ---------------------------------------------------------------------------

def test_kendall_tau_identical_and_reversed():
    scores = _as_map([5, 4, 3, 2, 1])
    assert kendall_tau(scores, scores) == pytest.approx(1.0)
    assert kendall_tau(scores, _as_map([1, 2, 3, 4, 5])) == pytest.approx(-1.0)


def test_kendall_tau_single_swap():
    assert kendall_tau(_as_map([1, 2, 3, 4]), _as_map([1, 3, 2, 4])) == pytest.approx(2 / 3)


@pytest.mark.parametrize('n', [2, 3, 4, 5])
def test_kendall_tau_matches_pair_enumeration(n):
    reference = list(range(n))
    for permutation in itertools.permutations(reference):
        expected = brute_force_tau_b(reference, list(permutation))
        assert kendall_tau(_as_map(reference), _as_map(permutation)) == pytest.approx(expected, abs=1e-12)


def test_kendall_tau_with_ties_matches_pair_enumeration():
    a = [0.7, 0.7, 0.5, 0.2, 0.2, 0.1]
    b = [3, 1, 1, 2, 0, 0]
    assert kendall_tau(_as_map(a), _as_map(b)) == pytest.approx(brute_force_tau_b(a, b), abs=1e-12)


def test_kendall_tau_is_symmetric():
    a, b = _as_map([0.9, 0.1, 0.5, 0.4, 0.3]), _as_map([0.2, 0.1, 0.9, 0.5, 0.4])
    assert kendall_tau(a, b) == pytest.approx(kendall_tau(b, a))


def test_kendall_tau_key_mismatch():
    with pytest.raises(StatisticsError, match='different systems'):
        kendall_tau({'a': 1, 'b': 2}, {'a': 1, 'c': 2})


def test_kendall_tau_needs_two_systems():
    with pytest.raises(StatisticsError):
        kendall_tau({'a': 1}, {'a': 1})


def test_kendall_tau_all_tied():
    with pytest.raises(StatisticsError, match='tied'):
        kendall_tau({'a': 1, 'b': 1, 'c': 1}, {'a': 1, 'b': 2, 'c': 3})


# ---------------------------------------------------------------------------
# tau@k
# ---------------------------------------------------------------------------

def test_tau_at_k_without_restriction_equals_tau():
    auto, manual = _as_map([0.9, 0.8, 0.3, 0.5, 0.1, 0.2]), _as_map([6, 5, 4, 3, 2, 1])
    for k in (6, 10):
        assert tau_at_k(auto, manual, k) == kendall_tau(auto, manual)


def test_tau_at_k_top_agree_tail_shuffled():
    auto, manual = _as_map([10, 9, 1, 3, 2]), _as_map([10, 9, 3, 2, 1])
    assert tau_at_k(auto, manual, 2) == pytest.approx(1.0)
    assert kendall_tau(auto, manual) < 1.0


def test_tau_at_k_six_systems_matches_pair_enumeration():
    auto = _as_map([0.50, 0.70, 0.60, 0.40, 0.20, 0.30])
    manual = _as_map([6, 5, 4, 3, 2, 1])
    top = ['s0', 's1', 's2']
    expected = brute_force_tau_b([auto[s] for s in top], [manual[s] for s in top])
    assert tau_at_k(auto, manual, 3) == pytest.approx(expected, abs=1e-12)


def test_tau_at_k_includes_boundary_ties():
    auto, manual = _as_map([3, 1, 2, 0]), _as_map([3, 2, 2, 1])
    # s1 and s2 tie for second place, so both are kept for k=2
    expected = brute_force_tau_b([3, 1, 2], [3, 2, 2])
    assert tau_at_k(auto, manual, 2) == pytest.approx(expected, abs=1e-12)


def test_tau_at_k_rejects_small_k():
    with pytest.raises(StatisticsError):
        tau_at_k(_as_map([1, 2]), _as_map([1, 2]), 1)


# ---------------------------------------------------------------------------
# Paired t-test and relative improvement
# ---------------------------------------------------------------------------

def test_paired_t_test_identical_lists():
    result = paired_t_test([0.3, 0.5, 0.9], [0.3, 0.5, 0.9])
    assert (result.t, result.p) == (0.0, 1.0)
    assert not result.significant


def test_paired_t_test_constant_difference():
    base = [i / 20 for i in range(10)]
    result = paired_t_test([b + 0.1 for b in base], base)
    assert result.zero_variance
    assert result.p == 0.0
    assert result.t > 0
    assert result.significant


@pytest.mark.parametrize('diffs', [
    (0.05, -0.01, 0.03, 0.02, 0.04),
    (0.10, 0.20, -0.05, 0.00, 0.15, 0.05),
    (-0.30, -0.10, -0.20, 0.05),
])
def test_paired_t_test_matches_reference(diffs):
    base = [0.5] * len(diffs)
    variant = [0.5 + d for d in diffs]
    expected_t, expected_p = reference_t_test([v - b for v, b in zip(variant, base)])

    result = paired_t_test(variant, base)
    assert result.t == pytest.approx(expected_t, abs=1e-9)
    assert result.p == pytest.approx(expected_p, abs=1e-9)
    assert math.copysign(1, result.t) == math.copysign(1, result.mean_difference)
    assert 0.0 <= result.p <= 1.0


def test_paired_t_test_length_mismatch():
    with pytest.raises(StatisticsError):
        paired_t_test([1, 2, 3], [1, 2])


def test_paired_t_test_needs_two_topics():
    with pytest.raises(StatisticsError):
        paired_t_test([1], [2])


def test_relative_improvement():
    assert relative_improvement(0.50, 0.60) == pytest.approx(20.0)
    assert relative_improvement(0.83, 0.99) == pytest.approx(19.277, abs=1e-3)
    assert relative_improvement(0.4, 0.4) == 0.0
    assert relative_improvement(0.0, 0.5) is None
    assert relative_improvement(None, 0.5) is None


# ---------------------------------------------------------------------------
# Leaderboards and the full meta-evaluation
# ---------------------------------------------------------------------------

def test_build_leaderboard_min_rank_ties():
    board = build_leaderboard([
        _run_eval('zeta', nugget_recall=0.7),
        _run_eval('alpha', nugget_recall=0.5),
        _run_eval('beta', nugget_recall=0.7),
    ], 'nugget_recall')

    assert [(e.system, e.rank) for e in board.entries] == [('beta', 1), ('zeta', 1), ('alpha', 3)]


def test_build_leaderboard_single_system():
    board = build_leaderboard([_run_eval('only', citation_support=0.3)], 'citation_support')
    assert board.entries[0].rank == 1


def test_build_leaderboard_skips_undefined_scores():
    board = build_leaderboard([_run_eval('a', citation_support=None), _run_eval('b', citation_support=0.2)],
                              'citation_support')
    assert [e.system for e in board.entries] == ['b']


def test_build_leaderboard_unknown_metric():
    with pytest.raises(ValidationError):
        build_leaderboard([_run_eval('a', nugget_recall=0.1)], 'fluency')


def test_leaderboard_csv():
    board = build_leaderboard([_run_eval('a', 'cov-sentence', nugget_recall=0.5)], 'nugget_recall')
    assert leaderboards_to_csv([board]) == 'system,variant,metric,score,rank\na,cov-sentence,nugget_recall,0.5,1\n'


def test_system_key():
    assert system_key('nuggetprobe', 'base') == 'nuggetprobe'
    assert system_key('nuggetprobe', 'citation') == 'nuggetprobe/citation'


def _population(values, variant='base'):
    evals = []
    for system, score in values.items():
        evals.append(_run_eval(system, variant, nugget_recall=score, nugget_density=score,
                               relevant_sentences=score, citation_support=score))
    return evals


def test_run_metaeval_perfect_agreement():
    scores = {f"sys{i}": 0.1 * i for i in range(1, 7)}
    result = run_metaeval(_population(scores), scores, ks=[3, 10])

    for agreement in result.metrics.values():
        assert agreement.n_systems == 6
        assert agreement.tau == pytest.approx(1.0)
        assert agreement.tau_at_k[10] == agreement.tau
    assert result.excluded == []


def test_run_metaeval_excludes_one_sided_systems(caplog):
    scores = {'a': 0.3, 'b': 0.2, 'c': 0.1}
    manual = {'a': 3, 'b': 2, 'd': 1}
    result = run_metaeval(_population(scores), manual, ks=[2])

    assert result.excluded == ['c', 'd']
    assert result.metrics['nugget_recall'].n_systems == 2
    assert any('excluded' in record.message for record in caplog.records)


def test_run_metaeval_needs_two_shared_systems():
    with pytest.raises(StatisticsError):
        run_metaeval(_population({'a': 0.3}), {'a': 1, 'b': 2}, ks=[2])


def _topics(values):
    return {f"t{i}": TopicEval(topic_id=f"t{i}", nugget_recall=v, citation_support=v, citation_support_defined=True)
            for i, v in enumerate(values)}


def test_compare_against_base():
    base = RunEval(system='nuggetprobe', variant='base', topics=_topics([0.5, 0.4, 0.6]),
                   macro={'nugget_recall': 0.5})
    variant = RunEval(system='nuggetprobe', variant='citation', topics=_topics([0.6, 0.5, 0.7]),
                      macro={'nugget_recall': 0.6})
    comparison = compare(base, variant, 'nugget_recall')

    assert comparison.improvement_pct == pytest.approx(20.0)
    assert comparison.zero_variance
    assert comparison.t is None
    assert comparison.mean_difference == pytest.approx(0.1)
    assert comparison.significant


def test_run_metaeval_compares_variants_with_their_base():
    base = RunEval(system='nuggetprobe', variant='base', topics=_topics([0.5, 0.4]), macro={'nugget_recall': 0.45})
    variant = RunEval(system='nuggetprobe', variant='gold', topics=_topics([0.9, 0.6]), macro={'nugget_recall': 0.75})
    other = RunEval(system='rival', variant='base', topics=_topics([0.2, 0.3]), macro={'nugget_recall': 0.25})
    manual = {'nuggetprobe': 2.0, 'nuggetprobe/gold': 3.0, 'rival': 1.0}

    result = run_metaeval([base, variant, other], manual, ks=[2])
    recall = [c for c in result.comparisons if c.metric == 'nugget_recall']
    assert len(recall) == 1
    assert recall[0].variant == 'gold'
    assert recall[0].improvement_pct == pytest.approx(100 * 0.3 / 0.45)


def test_read_manual_scores():
    assert read_manual_scores('system,score\na,0.5\nb,1\n') == {'a': 0.5, 'b': 1.0}
    with pytest.raises(ValidationError):
        read_manual_scores('name,value\na,1\n')
    with pytest.raises(ValidationError):
        read_manual_scores('system,score\na,high\n')


if __name__ == '__main__':
    raise SystemExit(pytest.main([__file__, '-v']))
