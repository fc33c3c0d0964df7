import math

import numpy as np
import pytest

from schema import EmptyInputError, GateFailure, InvalidArgumentError, Metric, Procedure, Quantity
from stats import (
    ProcedureResult,
    ScoreStats,
    accumulate,
    gain_factor,
    lux_violations,
    merge,
    merge_all,
    require_unbiased,
    select_best,
    summarize,
    unbiasedness_gate,
    z_value,
)


def _stream(values, collisions=None):
    stats = ScoreStats()
    collisions = collisions if collisions is not None else [0.0] * len(values)
    for v, c in zip(values, collisions):
        stats = accumulate(stats, v, c)
    return stats


def _result(name, variance, variance_error=0.0, estimate=1.0, std_error=0.01, collisions=2.0, cost_error=0.0):
    return ProcedureResult(
        procedure=Procedure.parse(name),
        quantity=Quantity.MASS,
        estimate=estimate,
        std_error=std_error,
        variance=variance,
        expected_collisions=collisions,
        cost=variance * collisions,
        variance_error=variance_error,
        cost_error=cost_error,
        particles=1000,
        repetitions=5,
    )


def test_constant_stream():
    stats = _stream([1.0, 1.0, 1.0])
    assert stats.n == 3
    assert stats.mean == 1.0
    assert stats.variance == 0.0


def test_two_point_stream():
    stats = _stream([0.0, 2.0], [1.0, 3.0])
    assert stats.mean == 1.0
    assert stats.variance == 2.0
    assert stats.coll_mean == 2.0
    assert stats.coll_variance == 2.0


def test_exponential_stream(rng):
    n = 100_000
    stats = ScoreStats.from_samples(rng.standard_exponential(n))
    assert abs(stats.mean - 1.0) < 0.013
    # the sample variance of a unit exponential has standard deviation sqrt(8 / n)
    assert abs(stats.variance - 1.0) < 4 * math.sqrt(8.0 / n)


def test_non_finite_samples_rejected():
    with pytest.raises(InvalidArgumentError):
        accumulate(ScoreStats(), math.nan)
    with pytest.raises(InvalidArgumentError):
        accumulate(ScoreStats(), 1.0, math.inf)
    with pytest.raises(InvalidArgumentError):
        ScoreStats.from_samples([1.0, math.inf])


def test_streaming_matches_bulk(rng):
    x = rng.normal(3.0, 2.0, 5000)
    c = rng.integers(0, 10, 5000).astype(float)
    streamed = _stream(list(x), list(c))
    bulk = ScoreStats.from_samples(x, c)
    assert streamed.n == bulk.n
    assert streamed.mean == pytest.approx(bulk.mean, rel=1e-12)
    assert streamed.m2 == pytest.approx(bulk.m2, rel=1e-10)
    assert streamed.coll_m2 == pytest.approx(bulk.coll_m2, rel=1e-10)


def test_merge_order_invariance(rng):
    x = rng.standard_exponential(1_000_000) * 3.0 + 1.0
    whole = ScoreStats.from_samples(x)
    for _ in range(3):
        cuts = np.sort(rng.choice(np.arange(1, x.size), size=20, replace=False))
        parts = [ScoreStats.from_samples(chunk) for chunk in np.split(x, cuts)]
        order = rng.permutation(len(parts))
        merged = merge_all(parts[i] for i in order)
        assert merged.n == whole.n
        assert merged.mean == pytest.approx(whole.mean, rel=1e-10)
        assert merged.m2 == pytest.approx(whole.m2, rel=1e-10)


def test_merge_with_empty_is_identity():
    a = ScoreStats.from_samples([1.0, 2.0, 4.0])
    assert merge(a, ScoreStats()) == a
    assert merge(ScoreStats(), a) == a


def test_summarize_detects_zero_variance():
    base = 1.0 - math.exp(-1.0)
    # rounding-level jitter on a deterministic score
    reps = [ScoreStats.from_samples([base, base * (1 + 1e-16), base], [2, 2, 2]) for _ in range(3)]
    result = summarize(Procedure.parse("natl_tl"), Quantity.MASS, reps)
    assert result.variance == 0.0
    assert result.cost == 0.0
    assert result.std_error == 0.0
    assert result.particles == 9
    assert result.repetitions == 3


def test_summarize_spread_and_cost(rng):
    reps = [ScoreStats.from_samples(rng.normal(1.0, 1.0, 500), rng.integers(1, 4, 500)) for _ in range(5)]
    result = summarize(Procedure.parse("a_tl"), Quantity.MASS, reps)
    assert result.cost == pytest.approx(result.variance * result.expected_collisions)
    assert result.std_error == pytest.approx(math.sqrt(result.variance / 2500))
    assert result.variance_error > 0.0
    with pytest.raises(EmptyInputError):
        summarize(Procedure.parse("a_tl"), Quantity.MASS, [])


def test_zero_variance_leader_wins():
    results = [_result("a_tl", 0.2, 0.01), _result("natl_tl", 0.0), _result("natl_ne", 0.05, 0.005)]
    sel = select_best(results, Metric.VARIANCE)
    assert sel.conclusive
    assert sel.best == "natl_tl"
    assert sel.runner_up == "natl_ne"
    assert sel.margin == pytest.approx(0.05)


def test_identical_samples_are_inconclusive():
    sel = select_best([_result("nac_ne", 0.1, 0.01), _result("natl_ne", 0.1, 0.01)], Metric.VARIANCE)
    assert not sel.conclusive
    assert sel.best is None
    # enum order breaks the exact tie
    assert sel.leader == "nac_ne"


def test_overlap_decides_conclusiveness():
    close = [_result("a_ne", 0.10, 0.01), _result("a_tl", 0.12, 0.01)]
    far = [_result("a_ne", 0.10, 0.001), _result("a_tl", 0.12, 0.001)]
    assert not select_best(close, Metric.VARIANCE, 0.95).conclusive
    assert select_best(far, Metric.VARIANCE, 0.95).conclusive


def test_selection_invariant_under_rescaling():
    results = [_result("a_tl", 0.3, 0.01), _result("nac_ne", 0.1, 0.01), _result("natl_tl", 0.2, 0.01)]
    scaled = [_result(r.name, 7.5 * r.variance, 7.5 * r.variance_error) for r in results]
    a = select_best(results, Metric.VARIANCE)
    b = select_best(scaled, Metric.VARIANCE)
    assert (a.best, a.leader, a.runner_up) == (b.best, b.leader, b.runner_up)


def test_cost_metric_selection():
    results = [_result("a_ne", 0.2, 0.001, collisions=1.0), _result("nac_ne", 0.15, 0.001, collisions=3.0)]
    assert select_best(results, Metric.VARIANCE).best == "nac_ne"
    assert select_best(results, Metric.COST).best == "a_ne"


def test_select_best_needs_input():
    with pytest.raises(EmptyInputError):
        select_best([], Metric.VARIANCE)


def test_z_value():
    assert z_value(0.95) == pytest.approx(1.959964, rel=1e-6)
    with pytest.raises(InvalidArgumentError):
        z_value(1.0)


def test_gain_factor_semantics():
    results = [_result("a_tl", 0.16, 0.001), _result("natl_ne", 0.04, 0.001)]
    sel = select_best(results, Metric.VARIANCE)
    assert gain_factor(results, Procedure.parse("a_tl"), sel, Metric.VARIANCE) == pytest.approx(2.0)
    assert gain_factor(results, Procedure.parse("a_tl"), sel, Metric.COST) == pytest.approx(4.0)
    assert gain_factor(results, Procedure.parse("natl_ne"), sel, Metric.VARIANCE) == 1.0


def test_gain_factor_infinite_for_zero_variance_best():
    results = [_result("a_tl", 0.16, 0.001), _result("natl_tl", 0.0)]
    sel = select_best(results, Metric.VARIANCE)
    assert gain_factor(results, Procedure.parse("a_tl"), sel, Metric.VARIANCE) == math.inf
    both_zero = [_result("a_ne", 0.0), _result("natl_tl", 0.0)]
    sel = select_best(both_zero, Metric.VARIANCE)
    assert gain_factor(both_zero, Procedure.parse("a_ne"), sel, Metric.VARIANCE) == 1.0


def test_gain_factor_needs_default():
    results = [_result("a_tl", 0.16), _result("natl_ne", 0.04)]
    sel = select_best(results, Metric.VARIANCE)
    with pytest.raises(InvalidArgumentError):
        gain_factor(results, Procedure.parse("a_c"), sel, Metric.VARIANCE)


def test_unbiasedness_gate():
    ok = [_result("a_tl", 0.1, estimate=1.00), _result("nac_tl", 0.1, estimate=1.02)]
    assert unbiasedness_gate(ok) == []
    require_unbiased(ok)
    bad = [_result("a_tl", 0.1, estimate=1.0), _result("nac_tl", 0.1, estimate=1.2)]
    failures = unbiasedness_gate(bad)
    assert [(a, b) for a, b, _ in failures] == [("a_tl", "nac_tl")]
    with pytest.raises(GateFailure):
        require_unbiased(bad)


def test_unbiasedness_gate_with_exact_estimates():
    exact = [_result("natl_tl", 0.0, estimate=0.5, std_error=0.0), _result("a_ne", 0.0, estimate=0.5, std_error=0.0)]
    assert unbiasedness_gate(exact) == []


def test_lux_violations():
    fine = [_result("a_ne", 0.1, 0.01), _result("a_c", 0.3, 0.01), _result("nac_c", 0.2, 0.01)]
    assert lux_violations(fine) == []
    broken = [_result("a_ne", 0.5, 0.01), _result("a_c", 0.3, 0.01), _result("nac_c", 0.4, 0.01)]
    violations = lux_violations(broken)
    assert len(violations) == 2
    assert any("Var(a_ne)" in v for v in violations)
    assert any("Var(nac_c)" in v for v in violations)
