"""
Per-event scoring for the eleven procedures.

Each collision in a cell exchanges a quantity with the background:
S_a(v) on absorption and S_s(v, v') on scattering. The collision factor
c_q(v) is the expected exchange per collision. Every estimator here is an
unbiased estimate of the total exchange per source particle.
"""
import math
from typing import Dict, List, NamedTuple

import numpy as np

from model import Background, GridCell
from schema import ContractViolationError, EstimatorKind, Procedure, Quantity, SimKind
from transport import Event, ParticlePath


class CellScore(NamedTuple):
    cell: int
    value: float


def absorption_exchange(q: Quantity, v: float) -> float:
    if q in (Quantity.COLLISION_COUNT, Quantity.ABSORPTION_COUNT, Quantity.MASS):
        return 1.0
    if q == Quantity.SCATTER_COUNT:
        return 0.0
    return v


def scattering_exchange(q: Quantity, v: float, v_after: float) -> float:
    if q in (Quantity.COLLISION_COUNT, Quantity.SCATTER_COUNT):
        return 1.0
    if q in (Quantity.ABSORPTION_COUNT, Quantity.MASS):
        return 0.0
    return v - v_after


def expected_scattering_exchange(q: Quantity, cell: GridCell, v: float) -> float:
    if q == Quantity.MOMENTUM:
        return v - cell.postcoll.mean()
    return scattering_exchange(q, v, v)


def quantity_factor(q: Quantity, cell: GridCell, v: float) -> float:
    """Expected exchange of q per collision at incoming velocity v."""
    rt = cell.rate_total
    return (cell.rate_absorb / rt) * absorption_exchange(q, v) + (cell.rate_scatter / rt) * expected_scattering_exchange(q, cell, v)


def applicable_in_cell(proc: Procedure, cell: GridCell) -> bool:
    """False when the procedure divides by a rate that vanishes in the cell."""
    if proc.est == EstimatorKind.ANALOG_ABS:
        return cell.rate_absorb > 0.0
    if proc.est == EstimatorKind.ANALOG_SCAT:
        return cell.rate_scatter > 0.0
    if proc.sim == SimKind.NON_ANALOG_TRACK_LENGTH and proc.est == EstimatorKind.COLLISION:
        return cell.rate_scatter > 0.0
    return True


def applicable(proc: Procedure, bg: Background) -> bool:
    return all(applicable_in_cell(proc, c) for c in bg.cells)


def _decayed_fraction(rate_t: float, rate_a: float, d: float) -> float:
    """(rate_t / rate_a) * (1 - exp(-rate_a d)), with its limit rate_t d at rate_a = 0."""
    if rate_a == 0.0:
        return rate_t * d
    return -(rate_t / rate_a) * math.expm1(-rate_a * d)


def score_event(proc: Procedure, q: Quantity, event: Event, cell: GridCell) -> float:
    """Contribution of one event to the cell it lies in."""
    est = proc.est
    sim = proc.sim

    if est in (EstimatorKind.ANALOG_ABS, EstimatorKind.ANALOG_SCAT, EstimatorKind.COLLISION):
        if not event.collision:
            return 0.0
        v = event.velocity_before
        if est == EstimatorKind.ANALOG_ABS:
            if not event.absorbed:
                return 0.0
            return absorption_exchange(q, v) + (cell.rate_scatter / cell.rate_absorb) * expected_scattering_exchange(q, cell, v)
        if est == EstimatorKind.ANALOG_SCAT:
            if event.absorbed:
                return 0.0
            return scattering_exchange(q, v, event.velocity_after) + (cell.rate_absorb / cell.rate_scatter) * absorption_exchange(q, v)
        c = quantity_factor(q, cell, v)
        if sim == SimKind.ANALOG:
            return c
        if sim == SimKind.NON_ANALOG_COLLISION:
            return event.weight_before * c
        return event.weight_after * (cell.rate_total / cell.rate_scatter) * c

    if not event.starts_flight:
        return 0.0
    v = event.velocity_after
    speed = abs(v)
    c = quantity_factor(q, cell, v)
    sigma_t = cell.rate_total / speed

    if est == EstimatorKind.TRACK_LENGTH:
        d = event.flight_length
        if sim == SimKind.NON_ANALOG_TRACK_LENGTH:
            # decay uses this flight's speed, not the speed before the event
            return event.weight_after * c * _decayed_fraction(sigma_t, cell.rate_absorb / speed, d)
        return event.weight_after * c * sigma_t * d

    # next-event: expected collisions left in the cell along the flight direction
    return event.weight_after * c * -math.expm1(-sigma_t * event.reach)


def _check_compatible(proc: Procedure, path: ParticlePath) -> None:
    if path.sim != proc.sim:
        raise ContractViolationError(f"procedure {proc.name} cannot score a {path.sim.value} path")


def event_scores(proc: Procedure, q: Quantity, path: ParticlePath, bg: Background) -> List[CellScore]:
    _check_compatible(proc, path)
    scores = []
    for event in path.events:
        value = score_event(proc, q, event, bg.cells[event.cell])
        if value != 0.0:
            scores.append(CellScore(event.cell, value))
    return scores


def score_path(proc: Procedure, q: Quantity, path: ParticlePath, bg: Background) -> np.ndarray:
    """Per-cell scores of a whole path, each cell summed with compensation."""
    per_cell: Dict[int, List[float]] = {}
    for item in event_scores(proc, q, path, bg):
        per_cell.setdefault(item.cell, []).append(item.value)
    scores = np.zeros(len(bg.cells))
    for j, values in per_cell.items():
        scores[j] = math.fsum(values)
    return scores


def score_path_total(proc: Procedure, q: Quantity, path: ParticlePath, bg: Background) -> float:
    _check_compatible(proc, path)
    return math.fsum(score_event(proc, q, e, bg.cells[e.cell]) for e in path.events)
