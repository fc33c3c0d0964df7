"""
Experiment driver: runs every enabled procedure over a parameter grid and
reduces the repetitions into a partition map.

Random streams come from one master seed. Every (point, procedure, repetition)
task gets its own stream keyed by
    SeedSequence(seed, spawn_key=(point, 1, procedure order, repetition))
or, with common random numbers, by
    SeedSequence(seed, spawn_key=(point, 0, simulation type, repetition))
so that procedures sharing a simulation type replay the same paths. Results
do not depend on the number of workers.
"""
import asyncio
import math
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from base_emitter import EmitContext, EmitResult, EmitterCollection
from config import Settings
from emitters import load_emitters
from estimators import applicable, score_path_total
from event_bus import GATE_FAILED, POINT_FINISHED, POINT_STARTED, SWEEP_FINISHED, bus
from kernel import score_batch
from model import (
    Background,
    ParamPoint1D0D,
    make_1d0d_background,
    make_1d1d_background,
    map_1d0d_to_1d1d,
    map_1d1d_to_1d0d,
)
from monitoring import RunMonitor
from schema import EmptyInputError, GateFailure, Metric, Procedure, Quantity, Setting, SimKind, Terminal
from stats import (
    ProcedureResult,
    ScoreStats,
    Selection,
    gain_factor,
    lux_violations,
    require_unbiased,
    select_best,
    summarize,
    unbiasedness_gate,
)
from transport import simulate_path

SIM_ORDER = list(SimKind)
# warn when more than this fraction of a procedure's paths end at the weight cutoff
CUTOFF_WARNING = 1e-3


class GridPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    setting: Setting
    survival: float
    collisionality: float
    pr: float
    mu: Optional[float] = None
    sigma: Optional[float] = None

    def param(self) -> ParamPoint1D0D:
        return ParamPoint1D0D(survival=self.survival, collisionality=self.collisionality, pr=self.pr)

    def background(self, length: float) -> Background:
        if self.setting == Setting.ONE_D0D:
            return make_1d0d_background(self.param(), length)
        if self.mu is not None:
            # built from the pair itself; the pr it maps to may round to 1
            rate_collisionality = self.collisionality * math.hypot(self.mu, self.sigma)
            return make_1d1d_background(self.mu, self.sigma, self.survival, rate_collisionality, length)
        return map_1d0d_to_1d1d(self.param(), length)

    def label(self) -> str:
        text = f"#{self.index} s={self.survival:g} ct={self.collisionality:g} pr={self.pr:.4g}"
        if self.mu is not None:
            text += f" mu={self.mu:g} sigma={self.sigma:g}"
        return text


def build_points(cfg: Settings) -> List[GridPoint]:
    """Grid points in survival-major order."""
    grid = cfg.grid
    setting = cfg.sweep.setting
    points: List[GridPoint] = []
    for s in grid.survival:
        for ct in grid.collisionality:
            if setting == Setting.ONE_D1D and grid.mu is not None:
                for mu, sigma in zip(grid.mu, grid.sigma):
                    p = map_1d1d_to_1d0d(mu, sigma, s, ct)
                    points.append(GridPoint(
                        index=len(points), setting=setting, survival=s,
                        collisionality=p.collisionality, pr=p.pr, mu=mu, sigma=sigma,
                    ))
                continue
            for pr in grid.pr:
                if setting == Setting.ONE_D1D and not 0.0 < pr < 1.0:
                    logger.warning(f"Skipping pr={pr:g}: a Maxwellian needs 0 < pr < 1")
                    continue
                points.append(GridPoint(index=len(points), setting=setting, survival=s, collisionality=ct, pr=pr))
    if not points:
        raise EmptyInputError("the parameter grid is empty")
    return points


# ==========================================
# Tasks
# ==========================================

class RepetitionTask(BaseModel):
    model_config = ConfigDict(frozen=True)

    point_index: int
    procedure: Procedure
    repetition: int
    background: Background
    quantity: Quantity
    particles: int
    seed: int
    common_random_numbers: bool = False
    weight_cutoff: float = 1e-12
    min_speed_fraction: float = 1e-9
    max_events: int = 10_000_000
    trace_paths: int = 0

    def spawn_key(self) -> Tuple[int, ...]:
        if self.common_random_numbers:
            return (self.point_index, 0, SIM_ORDER.index(self.procedure.sim), self.repetition)
        return (self.point_index, 1, self.procedure.order, self.repetition)


class RepetitionOutcome(BaseModel):
    point_index: int
    procedure: Procedure
    repetition: int
    stats: ScoreStats
    collisions: int
    cutoffs: int
    seconds: float
    traces: List[List[str]] = []


def run_repetition(task: RepetitionTask) -> RepetitionOutcome:
    """Simulate and score one batch of paths. Runs inside worker processes."""
    started = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(task.seed, spawn_key=task.spawn_key()))
    proc, bg = task.procedure, task.background
    limits = dict(
        weight_cutoff=task.weight_cutoff,
        min_speed_fraction=task.min_speed_fraction,
        max_events=task.max_events,
    )
    head = min(task.trace_paths, task.particles)
    scores = np.empty(task.particles)
    collisions = np.empty(task.particles)
    cutoffs = 0
    traces = []
    # traced paths need their event records; the rest go through the batch kernel
    for i in range(head):
        path = simulate_path(bg, proc.sim, rng, **limits)
        scores[i] = score_path_total(proc, task.quantity, path, bg)
        collisions[i] = path.collisions
        if path.terminal == Terminal.WEIGHT_CUTOFF:
            cutoffs += 1
        traces.append(path.trace_lines())
    batch = score_batch(proc, task.quantity, bg, rng, task.particles - head, **limits)
    scores[head:] = batch.scores
    collisions[head:] = batch.collisions
    cutoffs += batch.cutoffs
    return RepetitionOutcome(
        point_index=task.point_index,
        procedure=proc,
        repetition=task.repetition,
        stats=ScoreStats.from_samples(scores, collisions),
        collisions=int(collisions.sum()),
        cutoffs=cutoffs,
        seconds=time.perf_counter() - started,
        traces=traces,
    )


def build_tasks(cfg: Settings, point: GridPoint, particles: Optional[int] = None) -> Tuple[List[RepetitionTask], List[str]]:
    """Tasks for every applicable procedure at a point, plus the names of the skipped ones."""
    bg = point.background(cfg.sweep.length)
    tasks, skipped = [], []
    trace_paths = cfg.output.trace_paths if cfg.output.dump_traces else 0
    for proc in cfg.sweep.enabled_procedures():
        if not applicable(proc, bg):
            skipped.append(proc.name)
            continue
        for rep in range(cfg.sweep.repetitions):
            tasks.append(RepetitionTask(
                point_index=point.index,
                procedure=proc,
                repetition=rep,
                background=bg,
                quantity=cfg.sweep.quantity,
                particles=particles or cfg.sweep.particles,
                seed=cfg.sweep.seed,
                common_random_numbers=cfg.sweep.common_random_numbers,
                weight_cutoff=cfg.transport.weight_cutoff,
                min_speed_fraction=cfg.transport.min_speed_fraction,
                max_events=cfg.transport.max_events,
                trace_paths=trace_paths if rep == 0 else 0,
            ))
    return tasks, skipped


# ==========================================
# Reduction
# ==========================================

class PointOutcome(BaseModel):
    point: GridPoint
    results: List[ProcedureResult] = []
    skipped: List[str] = []
    selection: Optional[Selection] = None
    gain: float = math.nan
    gate_failures: List[Tuple[str, str, float]] = []
    lux_violations: List[str] = []
    error: Optional[str] = None
    traces: Dict[str, List[List[str]]] = {}

    @property
    def passed(self) -> bool:
        return self.error is None and not self.gate_failures


class PartitionMap(BaseModel):
    settings: Settings
    points: List[PointOutcome] = []
    border_conflicts: List[str] = []
    monitor: Dict = {}

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.points)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 2

    def require_passed(self) -> None:
        """Raise GateFailure naming the first point that aborted or failed the unbiasedness gate."""
        for outcome in self.points:
            if outcome.error:
                raise GateFailure(f"{outcome.point.label()} aborted: {outcome.error}")
            try:
                require_unbiased(outcome.results, self.settings.selection.gate_sigmas)
            except GateFailure as e:
                raise GateFailure(f"{outcome.point.label()}: {e}") from e


def assemble_point(
    cfg: Settings,
    point: GridPoint,
    outcomes: Sequence[RepetitionOutcome],
    skipped: Sequence[str],
    monitor: Optional[RunMonitor] = None,
) -> PointOutcome:
    """Reduce repetition outcomes in task order into results, selection and checks."""
    q = cfg.sweep.quantity
    metric = cfg.sweep.metric
    by_proc: Dict[str, List[RepetitionOutcome]] = {}
    order: List[Procedure] = []
    for o in sorted(outcomes, key=lambda o: (o.procedure.order, o.repetition)):
        if o.procedure.name not in by_proc:
            by_proc[o.procedure.name] = []
            order.append(o.procedure)
        by_proc[o.procedure.name].append(o)

    results, traces = [], {}
    for proc in order:
        reps = by_proc[proc.name]
        results.append(summarize(proc, q, [r.stats for r in reps]))
        if reps[0].traces:
            traces[proc.name] = reps[0].traces
        if monitor is not None:
            monitor.record(
                proc.name,
                paths=sum(r.stats.n for r in reps),
                collisions=sum(r.collisions for r in reps),
                cutoffs=sum(r.cutoffs for r in reps),
                seconds=sum(r.seconds for r in reps),
            )
        cutoff_share = sum(r.cutoffs for r in reps) / max(1, sum(r.stats.n for r in reps))
        if cutoff_share > CUTOFF_WARNING:
            logger.warning(f"{point.label()}: {cutoff_share:.2%} of {proc.name} paths ended at the weight cutoff")

    for name in skipped:
        logger.warning(f"{point.label()}: {name} is not applicable here and was skipped")

    outcome = PointOutcome(point=point, results=results, skipped=list(skipped), traces=traces)
    if not results:
        outcome.error = "no applicable procedure"
        return outcome

    selection = select_best(results, metric, cfg.selection.level)
    default = cfg.sweep.default()
    gain = math.nan
    if any(r.name == default.name for r in results):
        gain = gain_factor(results, default, selection, metric)

    outcome.selection = selection
    outcome.gain = gain
    outcome.gate_failures = unbiasedness_gate(results, cfg.selection.gate_sigmas)
    outcome.lux_violations = lux_violations(results, cfg.selection.lux_sigmas)

    for a, b, z in outcome.gate_failures:
        logger.error(f"{point.label()}: {a} and {b} disagree by {z:.1f} standard errors")
    for text in outcome.lux_violations:
        logger.warning(f"{point.label()}: {text}")
    if not selection.conclusive:
        logger.warning(f"{point.label()}: inconclusive between {selection.leader} and {selection.runner_up}")
    return outcome


def run_point(cfg: Settings, point: GridPoint, monitor: Optional[RunMonitor] = None, particles: Optional[int] = None) -> PointOutcome:
    """Run one grid point in the calling process."""
    tasks, skipped = build_tasks(cfg, point, particles)
    outcomes = [run_repetition(t) for t in tasks]
    return assemble_point(cfg, point, outcomes, skipped, monitor)


def _failed_point(point: GridPoint, skipped: List[str], errors: List[BaseException]) -> PointOutcome:
    message = "; ".join(f"{type(e).__name__}: {e}" for e in errors)
    logger.error(f"{point.label()} aborted: {message}")
    return PointOutcome(point=point, skipped=skipped, error=message)


async def run_sweep(cfg: Settings, monitor: Optional[RunMonitor] = None) -> PartitionMap:
    points = build_points(cfg)
    monitor = monitor or RunMonitor()
    loop = asyncio.get_running_loop()
    threads = cfg.sweep.threads
    pool = ProcessPoolExecutor(max_workers=threads) if threads > 1 else None
    outcomes: List[PointOutcome] = []

    try:
        for point in points:
            await bus.publish(POINT_STARTED, point.label(), index=point.index, total=len(points))
            try:
                tasks, skipped = build_tasks(cfg, point)
            except Exception as e:
                outcomes.append(_failed_point(point, [], [e]))
                continue

            if pool is None:
                done = []
                for task in tasks:
                    try:
                        done.append(run_repetition(task))
                    except Exception as e:
                        done.append(e)
            else:
                futures = [loop.run_in_executor(pool, run_repetition, task) for task in tasks]
                done = await asyncio.gather(*futures, return_exceptions=True)

            errors = [d for d in done if isinstance(d, BaseException)]
            if errors:
                outcome = _failed_point(point, skipped, errors)
            else:
                try:
                    outcome = assemble_point(cfg, point, done, skipped, monitor)
                except Exception as e:
                    outcome = _failed_point(point, skipped, [e])
            outcomes.append(outcome)
            monitor.point_done()

            if outcome.gate_failures or outcome.error:
                await bus.publish(GATE_FAILED, point.label(), index=point.index,
                                  failures=outcome.gate_failures, error=outcome.error)
            winner = None
            if outcome.selection is not None:
                winner = outcome.selection.best or "inconclusive"
            await bus.publish(POINT_FINISHED, point.label(), index=point.index, total=len(points),
                              winner=winner, gain=outcome.gain)
            logger.info(f"{point.label()}: winner {winner}, gain {outcome.gain:.3g}")
    finally:
        if pool is not None:
            pool.shutdown()

    pmap = PartitionMap(settings=cfg, points=outcomes, monitor=monitor.to_dict())
    pmap.border_conflicts = metric_border_conflicts(pmap)
    for text in pmap.border_conflicts:
        logger.warning(text)
    await bus.publish(SWEEP_FINISHED, monitor.get_summary(), passed=pmap.passed, points=len(outcomes))
    return pmap


async def emit_outputs(pmap: PartitionMap, cfg: Settings, out_dir: Optional[str] = None) -> Dict[str, EmitResult]:
    """Write the configured artifacts. Failures come back as EmitResult errors, never as exceptions."""
    if not pmap.points:
        raise EmptyInputError("nothing to emit: the partition map is empty")
    names = list(cfg.output.emitters)
    if cfg.output.dump_traces and "traces" not in names:
        names.append("traces")
    collection = EmitterCollection(*load_emitters(names))
    missing = set(names) - set(collection.names())
    ctx = EmitContext(settings=cfg, out_dir=out_dir or cfg.output.directory, partition=pmap)
    results = await collection.emit_all(ctx)
    for name in sorted(missing):
        results[name] = EmitResult(error=f"Emitter {name} is invalid")
    for name, result in results.items():
        if result.error:
            logger.error(f"Output {name} failed: {result.error}")
        elif result.output:
            logger.info(f"Wrote {result.output}")
    return results


# ==========================================
# Partition checks
# ==========================================

def metric_border_conflicts(pmap: PartitionMap) -> List[str]:
    """
    Points where the variance and cost metrics pick different conclusive winners
    of the same simulation type. Within a simulation type the collision count is
    shared, so both metrics must agree there.
    """
    level = pmap.settings.selection.level
    conflicts = []
    for outcome in pmap.points:
        if len(outcome.results) < 2:
            continue
        by_variance = select_best(outcome.results, Metric.VARIANCE, level)
        by_cost = select_best(outcome.results, Metric.COST, level)
        if not (by_variance.conclusive and by_cost.conclusive):
            continue
        v, c = Procedure.parse(by_variance.best), Procedure.parse(by_cost.best)
        if v.sim == c.sim and v != c:
            conflicts.append(f"{outcome.point.label()}: variance picks {v.name}, cost picks {c.name}")
    return conflicts


def sample_conclusive(pmap: PartitionMap, samples: int = 3) -> List[PointOutcome]:
    conclusive = [p for p in pmap.points if p.selection is not None and p.selection.conclusive]
    if len(conclusive) <= samples:
        return conclusive
    picks = np.linspace(0, len(conclusive) - 1, samples).round().astype(int)
    return [conclusive[i] for i in picks]


def check_winner_stability(pmap: PartitionMap, samples: int = 3) -> List[str]:
    """Rerun sampled conclusive points with twice the particles and report changed winners."""
    cfg = pmap.settings
    changed = []
    for outcome in sample_conclusive(pmap, samples):
        rerun = run_point(cfg, outcome.point, particles=2 * cfg.sweep.particles)
        if rerun.selection is None:
            continue
        if rerun.selection.conclusive and rerun.selection.best != outcome.selection.best:
            changed.append(f"{outcome.point.label()}: {outcome.selection.best} -> {rerun.selection.best}")
        else:
            logger.debug(f"{outcome.point.label()}: winner {outcome.selection.best} stable at 2N")
    return changed
