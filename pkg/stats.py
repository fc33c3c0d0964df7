import math
from functools import reduce
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import norm

from schema import (
    EmptyInputError,
    EstimatorKind,
    GateFailure,
    InvalidArgumentError,
    Metric,
    Procedure,
    Quantity,
    SimKind,
)

# Normalized variances below this are rounding noise on a deterministic score.
ZERO_VARIANCE = 1e-20


# ==========================================
# Streaming moments
# ==========================================

class ScoreStats(BaseModel):
    """Mergeable first and second central moments of per-path scores and collision counts."""
    model_config = ConfigDict(frozen=True)

    n: int = Field(0, ge=0)
    mean: float = 0.0
    m2: float = Field(0.0, ge=0.0)
    coll_mean: float = 0.0
    coll_m2: float = Field(0.0, ge=0.0)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def coll_variance(self) -> float:
        return self.coll_m2 / (self.n - 1) if self.n > 1 else 0.0

    @classmethod
    def from_samples(cls, scores: Sequence[float], collisions: Optional[Sequence[float]] = None) -> "ScoreStats":
        x = np.asarray(scores, dtype=float)
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("scores must be finite")
        c = np.zeros_like(x) if collisions is None else np.asarray(collisions, dtype=float)
        if c.shape != x.shape:
            raise InvalidArgumentError("scores and collision counts differ in length")
        if x.size == 0:
            return cls()
        mean = float(np.mean(x))
        coll_mean = float(np.mean(c))
        return cls(
            n=int(x.size),
            mean=mean,
            m2=float(np.sum((x - mean) ** 2)),
            coll_mean=coll_mean,
            coll_m2=float(np.sum((c - coll_mean) ** 2)),
        )


def accumulate(stats: ScoreStats, path_score: float, path_collision_count: float = 0.0) -> ScoreStats:
    """Welford update with one path."""
    if not (math.isfinite(path_score) and math.isfinite(path_collision_count)):
        raise InvalidArgumentError(f"non-finite sample ({path_score}, {path_collision_count})")
    n = stats.n + 1
    delta = path_score - stats.mean
    mean = stats.mean + delta / n
    m2 = stats.m2 + delta * (path_score - mean)
    cdelta = path_collision_count - stats.coll_mean
    coll_mean = stats.coll_mean + cdelta / n
    coll_m2 = stats.coll_m2 + cdelta * (path_collision_count - coll_mean)
    return ScoreStats(n=n, mean=mean, m2=max(m2, 0.0), coll_mean=coll_mean, coll_m2=max(coll_m2, 0.0))


def merge(first: ScoreStats, second: ScoreStats) -> ScoreStats:
    """Parallel-variance combination of two disjoint samples."""
    if first.n == 0:
        return second
    if second.n == 0:
        return first
    n = first.n + second.n
    delta = second.mean - first.mean
    cdelta = second.coll_mean - first.coll_mean
    return ScoreStats(
        n=n,
        mean=(first.mean * first.n + second.mean * second.n) / n,
        m2=first.m2 + second.m2 + delta * delta * first.n * second.n / n,
        coll_mean=(first.coll_mean * first.n + second.coll_mean * second.n) / n,
        coll_m2=first.coll_m2 + second.coll_m2 + cdelta * cdelta * first.n * second.n / n,
    )


def merge_all(parts: Iterable[ScoreStats]) -> ScoreStats:
    return reduce(merge, parts, ScoreStats())


def _zeroed(variance: float, mean: float) -> float:
    scale = mean * mean if mean != 0.0 else 1.0
    return 0.0 if variance / scale < ZERO_VARIANCE else variance


# ==========================================
# Results
# ==========================================

class ProcedureResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    procedure: Procedure
    quantity: Quantity
    estimate: float
    std_error: float
    variance: float
    expected_collisions: float
    cost: float
    variance_error: float = 0.0
    cost_error: float = 0.0
    particles: int
    repetitions: int

    @property
    def name(self) -> str:
        return self.procedure.name

    def metric(self, metric: Metric) -> float:
        return self.variance if metric == Metric.VARIANCE else self.cost

    def metric_error(self, metric: Metric) -> float:
        return self.variance_error if metric == Metric.VARIANCE else self.cost_error


def _spread(values: List[float]) -> float:
    """Standard error of the mean of per-repetition values."""
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def summarize(proc: Procedure, q: Quantity, repetitions: Sequence[ScoreStats]) -> ProcedureResult:
    if not repetitions:
        raise EmptyInputError(f"no repetitions to summarize for {proc.name}")
    total = merge_all(repetitions)
    if total.n == 0:
        raise EmptyInputError(f"no paths recorded for {proc.name}")

    variance = _zeroed(total.variance, total.mean)
    rep_variances = [_zeroed(r.variance, r.mean) for r in repetitions]
    rep_costs = [v * r.coll_mean for v, r in zip(rep_variances, repetitions)]

    return ProcedureResult(
        procedure=proc,
        quantity=q,
        estimate=total.mean,
        std_error=math.sqrt(variance / total.n),
        variance=variance,
        expected_collisions=total.coll_mean,
        cost=variance * total.coll_mean,
        variance_error=_spread(rep_variances),
        cost_error=_spread(rep_costs),
        particles=total.n,
        repetitions=len(repetitions),
    )


# ==========================================
# Selection
# ==========================================

class Selection(BaseModel):
    model_config = ConfigDict(frozen=True)

    metric: Metric
    level: float
    # argmin of the metric, reported even when the comparison is inconclusive
    leader: str
    leader_metric: float
    best: Optional[str] = None
    runner_up: Optional[str] = None
    runner_up_metric: Optional[float] = None
    margin: Optional[float] = None

    @property
    def conclusive(self) -> bool:
        return self.best is not None


def z_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError(f"confidence level must lie in (0, 1), got {level}")
    return float(norm.ppf(0.5 + 0.5 * level))


def select_best(results: Sequence[ProcedureResult], metric: Metric, level: float = 0.95) -> Selection:
    if not results:
        raise EmptyInputError("no results to select from")
    quantities = {r.quantity for r in results}
    if len(quantities) > 1:
        raise InvalidArgumentError("results mix quantities")

    ranked = sorted(results, key=lambda r: (r.metric(metric), r.procedure.order))
    leader = ranked[0]
    if len(ranked) == 1:
        return Selection(metric=metric, level=level, leader=leader.name, leader_metric=leader.metric(metric), best=leader.name)

    runner = ranked[1]
    z = z_value(level)
    upper_leader = leader.metric(metric) + z * leader.metric_error(metric)
    lower_runner = runner.metric(metric) - z * runner.metric_error(metric)
    conclusive = upper_leader < lower_runner
    if not conclusive:
        logger.debug(f"{leader.name} vs {runner.name}: confidence intervals overlap")
    return Selection(
        metric=metric,
        level=level,
        leader=leader.name,
        leader_metric=leader.metric(metric),
        best=leader.name if conclusive else None,
        runner_up=runner.name,
        runner_up_metric=runner.metric(metric),
        margin=runner.metric(metric) - leader.metric(metric),
    )


def gain_factor(results: Sequence[ProcedureResult], default: Procedure, best: Selection, metric: Metric) -> float:
    """How much worse the default is than the leader: std-dev ratio for variance, cost ratio for cost."""
    by_name = {r.name: r for r in results}
    if default.name not in by_name:
        raise InvalidArgumentError(f"default procedure {default.name} has no result")
    d = by_name[default.name]
    b = by_name[best.leader]
    if metric == Metric.VARIANCE:
        num, den = math.sqrt(d.variance), math.sqrt(b.variance)
    else:
        num, den = d.cost, b.cost
    if den == 0.0:
        return math.inf if num > 0.0 else 1.0
    return max(num / den, 1.0)


# ==========================================
# Consistency checks
# ==========================================

def unbiasedness_gate(results: Sequence[ProcedureResult], sigmas: float = 4.0) -> List[Tuple[str, str, float]]:
    """Pairs of procedures whose estimates disagree by more than `sigmas` combined standard errors."""
    failures = []
    for i, a in enumerate(results):
        for b in results[i + 1:]:
            diff = abs(a.estimate - b.estimate)
            err = math.hypot(a.std_error, b.std_error)
            floor = 1e-12 * max(1.0, abs(a.estimate), abs(b.estimate))
            if diff > sigmas * err + floor:
                failures.append((a.name, b.name, diff / err if err > 0 else math.inf))
    return failures


def require_unbiased(results: Sequence[ProcedureResult], sigmas: float = 4.0) -> None:
    failures = unbiasedness_gate(results, sigmas)
    if failures:
        pairs = ", ".join(f"{a}/{b} ({z:.1f} sigma)" for a, b, z in failures)
        raise GateFailure(f"estimates disagree: {pairs}")


LUX_QUANTITIES = (Quantity.MASS, Quantity.COLLISION_COUNT)


def _variance_exceeds(worse: ProcedureResult, better: ProcedureResult, sigmas: float) -> bool:
    tolerance = sigmas * math.hypot(worse.variance_error, better.variance_error)
    return worse.variance - better.variance > tolerance


def lux_violations(results: Sequence[ProcedureResult], sigmas: float = 3.0) -> List[str]:
    """
    Check Var(ne) <= Var(c) for every simulation type and Var(nac_c) <= Var(a_c),
    each with a one-sided tolerance. Only meaningful for mass and collision counts.
    """
    if not results or results[0].quantity not in LUX_QUANTITIES:
        return []
    by_name = {r.name: r for r in results}
    pairs = [
        (Procedure(sim=sim, est=EstimatorKind.NEXT_EVENT).name, Procedure(sim=sim, est=EstimatorKind.COLLISION).name)
        for sim in SimKind
    ]
    pairs.append(("nac_c", "a_c"))

    violations = []
    for lower, upper in pairs:
        if lower in by_name and upper in by_name and _variance_exceeds(by_name[lower], by_name[upper], sigmas):
            violations.append(f"Var({lower}) = {by_name[lower].variance:.6g} exceeds Var({upper}) = {by_name[upper].variance:.6g}")
    return violations
