import csv
import json
import math

import pytest

from config import GridSettings, OutputSettings, Settings, SweepSettings
from event_bus import bus
from monitoring import RunMonitor
from schema import EmptyInputError, EstimatorKind, GateFailure, Metric, Procedure, Quantity, Setting
from stats import ProcedureResult, lux_violations, select_best
from sweep import (
    GridPoint,
    PartitionMap,
    PointOutcome,
    build_points,
    build_tasks,
    check_winner_stability,
    emit_outputs,
    metric_border_conflicts,
    run_point,
    run_repetition,
    run_sweep,
    sample_conclusive,
)


def _one_point(small_settings, **grid):
    data = small_settings.model_dump()
    data["grid"].update(grid)
    return Settings(**data)


@pytest.fixture
def events():
    seen = []

    async def listener(event):
        seen.append(event)

    bus.subscribe(listener)
    yield seen
    bus.unsubscribe(listener)


def test_default_grid_size():
    points = build_points(Settings())
    assert len(points) == 75
    assert [p.index for p in points] == list(range(75))
    # survival-major
    assert [p.survival for p in points[:25]] == [0.25] * 25
    assert (points[1].collisionality, points[1].pr) == (0.1, 0.25)


def test_1d1d_grid_skips_deterministic_laws():
    cfg = Settings(sweep=SweepSettings(setting=Setting.ONE_D1D))
    points = build_points(cfg)
    assert len(points) == 45
    assert all(0.0 < p.pr < 1.0 for p in points)


def test_1d1d_grid_from_maxwellian_pairs():
    cfg = Settings(
        sweep=SweepSettings(setting=Setting.ONE_D1D),
        grid=GridSettings(survival=[0.5], collisionality=[1.0], mu=[0.0, 0.6], sigma=[1.0, 0.8]),
    )
    points = build_points(cfg)
    assert len(points) == 2
    assert points[0].pr == pytest.approx(0.5)
    assert points[1].pr == pytest.approx(0.8)
    bg = points[1].background(1.0)
    law = bg.cells[0].postcoll
    assert (law.mu, law.sigma) == (pytest.approx(0.6), pytest.approx(0.8))
    back = bg.read_back()
    assert back.pr == pytest.approx(points[1].pr)
    assert back.collisionality == pytest.approx(points[1].collisionality)


def test_narrow_maxwellians_keep_their_parameters():
    cfg = Settings(
        sweep=SweepSettings(setting=Setting.ONE_D1D),
        grid=GridSettings(survival=[0.5], collisionality=[2.0], mu=[1.0, 1.0], sigma=[1e-3, 1e-8]),
    )
    points = build_points(cfg)
    assert points[1].pr == 1.0
    for point, sigma in zip(points, (1e-3, 1e-8)):
        bg = point.background(1.0)
        law = bg.cells[0].postcoll
        assert (law.mu, law.sigma) == (1.0, sigma)
        assert bg.cells[0].rate_total == pytest.approx(2.0, rel=1e-14)
        assert bg.cells[0].survival == pytest.approx(0.5)


def test_empty_grid():
    with pytest.raises(EmptyInputError):
        build_points(Settings(grid=GridSettings(survival=[])))
    only_edges = Settings(sweep=SweepSettings(setting=Setting.ONE_D1D), grid=GridSettings(pr=[0.0, 1.0]))
    with pytest.raises(EmptyInputError):
        build_points(only_edges)


def test_stream_keys(small_settings):
    point = build_points(small_settings)[0]
    tasks, skipped = build_tasks(small_settings, point)
    assert skipped == []
    assert len(tasks) == 11 * 3
    keys = {t.spawn_key() for t in tasks}
    assert len(keys) == len(tasks)

    shared = small_settings.with_overrides(common_random_numbers=True)
    crn_tasks, _ = build_tasks(shared, point)
    assert len({t.spawn_key() for t in crn_tasks}) == 3 * 3


def test_repetitions_are_reproducible(small_settings):
    point = build_points(small_settings)[0]
    tasks, _ = build_tasks(small_settings, point)
    first, again = run_repetition(tasks[0]), run_repetition(tasks[0])
    assert first.stats == again.stats
    assert first.collisions == again.collisions
    assert run_repetition(tasks[1]).stats != first.stats


def test_run_point(small_settings):
    monitor = RunMonitor()
    outcome = run_point(small_settings, build_points(small_settings)[0], monitor)
    assert outcome.passed
    assert [r.name for r in outcome.results] == [p.name for p in small_settings.sweep.enabled_procedures()]
    assert all(r.particles == 3000 and r.repetitions == 3 for r in outcome.results)
    assert outcome.selection is not None
    assert outcome.gain >= 1.0
    stats = monitor.to_dict()
    assert stats["total_paths"] == 11 * 3000
    assert set(stats["by_procedure"]) == {r.name for r in outcome.results}


def test_forward_scattering_makes_natl_tl_exact(small_settings):
    cfg = _one_point(small_settings, pr=[1.0])
    outcome = run_point(cfg, build_points(cfg)[0])
    by_name = {r.name: r for r in outcome.results}
    assert by_name["natl_tl"].variance == 0.0
    assert by_name["natl_tl"].estimate == pytest.approx(-math.expm1(-1.0), rel=1e-12)
    assert outcome.selection.leader == "natl_tl"
    assert outcome.gain == math.inf
    assert outcome.passed


def test_pure_absorber_skips_scattering_procedures(small_settings):
    cfg = _one_point(small_settings, survival=[0.0])
    outcome = run_point(cfg, build_points(cfg)[0])
    assert sorted(outcome.skipped) == ["a_a_sc", "natl_c"]
    by_name = {r.name: r for r in outcome.results}
    assert len(by_name) == 9
    assert by_name["a_ne"].variance == 0.0
    assert by_name["nac_ne"].variance == 0.0
    assert outcome.passed


def test_common_random_numbers_share_collisions(small_settings):
    shared = run_point(small_settings.with_overrides(common_random_numbers=True), build_points(small_settings)[0])
    by_name = {r.name: r for r in shared.results}
    assert by_name["a_c"].expected_collisions == by_name["a_tl"].expected_collisions == by_name["a_ne"].expected_collisions
    assert by_name["nac_c"].expected_collisions == by_name["nac_tl"].expected_collisions

    independent = run_point(small_settings, build_points(small_settings)[0])
    by_name = {r.name: r for r in independent.results}
    assert by_name["a_c"].expected_collisions != by_name["a_tl"].expected_collisions


def test_momentum_sweep_quotes_gain_against_a_c(small_settings):
    cfg = small_settings.with_overrides(quantity=Quantity.MOMENTUM)
    assert cfg.sweep.default().name == "a_c"
    outcome = run_point(cfg, build_points(cfg)[0])
    assert outcome.results[0].quantity == Quantity.MOMENTUM
    assert len(outcome.results) == 11
    assert outcome.gate_failures == []
    assert outcome.gain >= 1.0


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


async def test_sweep_writes_outputs(small_settings, tmp_path, events):
    pmap = await run_sweep(small_settings)
    assert pmap.passed
    assert pmap.exit_code == 0
    assert [e["type"] for e in events] == ["point_started", "point_finished", "sweep_finished"]
    assert events[1]["winner"] == (pmap.points[0].selection.best or "inconclusive")

    results = await emit_outputs(pmap, small_settings)
    assert not any(r.error for r in results.values())
    out = tmp_path / "out"
    rows = _rows(out / "results.csv")
    assert len(rows) == 11
    assert {r["metric"] for r in rows} == {"variance"}
    partition = json.loads((out / "partition.json").read_text())
    assert len(partition["points"]) == 1
    assert partition["default_procedure"] == "a_tl"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["passed"] is True
    assert _rows(out / "gain.csv")[0]["default"] == "a_tl"


async def test_zero_variance_gain_is_written_as_inf(small_settings, tmp_path):
    cfg = _one_point(small_settings, pr=[1.0])
    pmap = await run_sweep(cfg)
    await emit_outputs(pmap, cfg)
    gain = _rows(tmp_path / "out" / "gain.csv")
    assert gain[0]["gain"] == "inf"
    assert gain[0]["leader"] == "natl_tl"


async def test_rerun_is_byte_identical(small_settings, tmp_path):
    first = await run_sweep(small_settings)
    await emit_outputs(first, small_settings, str(tmp_path / "a"))
    second = await run_sweep(small_settings)
    await emit_outputs(second, small_settings, str(tmp_path / "b"))
    for name in ("results.csv", "partition.json", "gain.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


async def test_traces_are_dumped_on_request(small_settings, tmp_path):
    data = small_settings.model_dump()
    data["output"].update(dump_traces=True, trace_paths=2)
    cfg = Settings(**data)
    pmap = await run_sweep(cfg)
    results = await emit_outputs(pmap, cfg)
    assert "traces" in results
    files = sorted((tmp_path / "out" / "traces").iterdir())
    assert len(files) == 11
    assert files[0].name.startswith("point0000_")
    assert sum(1 for line in files[0].read_text().splitlines() if line.startswith("# path")) == 2


@pytest.mark.slow
async def test_worker_count_does_not_change_results(small_settings, tmp_path):
    serial = await run_sweep(small_settings)
    parallel = await run_sweep(small_settings.with_overrides(threads=2))
    await emit_outputs(serial, small_settings, str(tmp_path / "serial"))
    await emit_outputs(parallel, small_settings, str(tmp_path / "parallel"))
    assert (tmp_path / "serial" / "results.csv").read_bytes() == (tmp_path / "parallel" / "results.csv").read_bytes()


async def test_emit_outputs_needs_points(small_settings):
    with pytest.raises(EmptyInputError):
        await emit_outputs(PartitionMap(settings=small_settings), small_settings)


def _result(name, variance, collisions, variance_error=0.001, cost_error=0.001):
    return ProcedureResult(
        procedure=Procedure.parse(name),
        quantity=Quantity.MASS,
        estimate=0.5,
        std_error=0.001,
        variance=variance,
        expected_collisions=collisions,
        cost=variance * collisions,
        variance_error=variance_error,
        cost_error=cost_error,
        particles=1000,
        repetitions=3,
    )


def _point(index=0):
    return GridPoint(index=index, setting=Setting.ONE_D0D, survival=0.5, collisionality=1.0, pr=0.5)


def test_metric_border_conflicts(small_settings):
    # the collision count is shared within a simulation type, so this pair cannot
    # disagree in a real sweep
    conflicting = PointOutcome(point=_point(), results=[_result("a_c", 0.1, 3.0), _result("a_tl", 0.2, 1.0)])
    agreeing = PointOutcome(point=_point(1), results=[_result("a_c", 0.1, 1.0), _result("a_tl", 0.2, 1.0)])
    pmap = PartitionMap(settings=small_settings, points=[conflicting, agreeing])
    conflicts = metric_border_conflicts(pmap)
    assert len(conflicts) == 1
    assert "variance picks a_c, cost picks a_tl" in conflicts[0]


def test_gate_failure_sets_exit_code(small_settings):
    ok = PointOutcome(point=_point())
    failed = PointOutcome(point=_point(1), gate_failures=[("a_tl", "nac_tl", 5.2)])
    assert PartitionMap(settings=small_settings, points=[ok]).exit_code == 0
    pmap = PartitionMap(settings=small_settings, points=[ok, failed])
    assert not pmap.passed
    assert pmap.exit_code == 2
    assert PartitionMap(settings=small_settings, points=[PointOutcome(point=_point(), error="boom")]).exit_code == 2


def test_sample_conclusive_spreads_over_the_grid(small_settings):
    outcomes = []
    for i in range(7):
        results = [_result("a_c", 0.1, 1.0), _result("a_tl", 0.2, 1.0)]
        outcome = PointOutcome(point=_point(i), results=results)
        outcome.selection = select_best(results, small_settings.sweep.metric)
        outcomes.append(outcome)
    picked = sample_conclusive(PartitionMap(settings=small_settings, points=outcomes), samples=3)
    assert [p.point.index for p in picked] == [0, 3, 6]


def test_require_passed(small_settings):
    ok = PointOutcome(point=_point(), results=[_result("a_c", 0.1, 1.0), _result("a_tl", 0.2, 1.0)])
    PartitionMap(settings=small_settings, points=[ok]).require_passed()

    biased = [_result("a_c", 0.1, 1.0), _result("a_tl", 0.2, 1.0).model_copy(update={"estimate": 0.6})]
    with pytest.raises(GateFailure, match="a_c/a_tl"):
        PartitionMap(settings=small_settings, points=[ok, PointOutcome(point=_point(1), results=biased)]).require_passed()
    with pytest.raises(GateFailure, match="aborted"):
        PartitionMap(settings=small_settings, points=[PointOutcome(point=_point(), error="boom")]).require_passed()


def test_mass_variances_respect_lux_ordering(small_settings):
    cfg = small_settings.with_overrides(particles=4000, repetitions=5)
    outcome = run_point(cfg, build_points(cfg)[0])
    by_name = {r.name: r for r in outcome.results}
    assert len(by_name) == 11
    assert outcome.lux_violations == []
    for lower, upper in [("a_ne", "a_c"), ("nac_ne", "nac_c"), ("natl_ne", "natl_c"), ("nac_c", "a_c")]:
        lo, hi = by_name[lower], by_name[upper]
        assert lo.variance <= hi.variance + 3.0 * math.hypot(lo.variance_error, hi.variance_error), lower


def test_lux_check_flags_inverted_variances(small_settings):
    results = [_result("nac_c", 0.1, 1.0), _result("nac_ne", 0.5, 1.0)]
    assert lux_violations(results, small_settings.selection.lux_sigmas) == [
        "Var(nac_ne) = 0.5 exceeds Var(nac_c) = 0.1"
    ]


def test_stable_winner_is_not_reported(small_settings):
    cfg = _one_point(small_settings, pr=[1.0])
    pmap = PartitionMap(settings=cfg, points=[run_point(cfg, build_points(cfg)[0])])
    assert pmap.points[0].selection.best == "natl_tl"
    assert check_winner_stability(pmap) == []


def test_changed_winner_is_reported(small_settings, monkeypatch):
    results = [_result("a_c", 0.1, 1.0), _result("a_tl", 0.2, 1.0)]
    outcome = PointOutcome(point=_point(), results=results, selection=select_best(results, Metric.VARIANCE))
    flipped = [_result("a_c", 0.2, 1.0), _result("a_tl", 0.1, 1.0)]
    rerun = PointOutcome(point=_point(), results=flipped, selection=select_best(flipped, Metric.VARIANCE))
    seen = {}

    def fake_run_point(cfg, point, monitor=None, particles=None):
        seen["particles"] = particles
        return rerun

    monkeypatch.setattr("sweep.run_point", fake_run_point)
    changed = check_winner_stability(PartitionMap(settings=small_settings, points=[outcome]))
    assert seen["particles"] == 2 * small_settings.sweep.particles
    assert changed == [f"{_point().label()}: a_c -> a_tl"]


def _grid_settings(tmp_path, **sweep):
    return Settings(
        sweep=SweepSettings(particles=5000, repetitions=5, threads=1, seed=11, **sweep),
        output=OutputSettings(directory=str(tmp_path / "out")),
    )


def _conclusive_winners(pmap):
    return {p.selection.best for p in pmap.points if p.selection is not None and p.selection.conclusive}


@pytest.mark.slow
async def test_default_grid_mass_partition(tmp_path):
    pmap = await run_sweep(_grid_settings(tmp_path))
    assert len(pmap.points) == 75
    for outcome in pmap.points:
        assert outcome.lux_violations == [], outcome.point.label()
    winners = _conclusive_winners(pmap)
    assert winners
    assert winners <= {"nac_ne", "natl_ne", "natl_tl"}


@pytest.mark.slow
async def test_cost_metric_lets_analog_next_event_win(tmp_path):
    pmap = await run_sweep(_grid_settings(tmp_path, metric=Metric.COST))
    assert "a_ne" in _conclusive_winners(pmap)


@pytest.mark.slow
async def test_1d1d_momentum_has_a_collision_winner(tmp_path):
    cfg = _grid_settings(tmp_path, setting=Setting.ONE_D1D, quantity=Quantity.MOMENTUM, metric=Metric.COST)
    data = cfg.model_dump()
    data["grid"]["survival"] = Settings.preset("momentum-high-survival").grid.survival
    pmap = await run_sweep(Settings(**data))
    assert any(Procedure.parse(name).est == EstimatorKind.COLLISION for name in _conclusive_winners(pmap))
