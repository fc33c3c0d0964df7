"""
Path generation for the three simulation types.

A path is the ordered list of events a single particle goes through: its birth,
collisions, boundary hits and cell-edge crossings, ending with absorption,
boundary exit or weight cutoff.
"""
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from model import Background, GridCell, Maxwellian, reflect, sample_postcollision
from schema import (
    ContractViolationError,
    DegenerateVelocityError,
    SimKind,
    Terminal,
    TransportError,
)

WEIGHT_CUTOFF = 1e-12
MIN_SPEED_FRACTION = 1e-9
MAX_EVENTS = 10_000_000
# redraws before a degenerate post-collision speed is reported
MAX_SPEED_REDRAWS = 1000


class FlightKind:
    COLLISION = "collision"
    BOUNDARY = "boundary"
    CROSSING = "crossing"


class Flight(NamedTuple):
    kind: str
    distance: float
    # distance to the edge of the current cell along the direction of motion
    reach: float


@dataclass(frozen=True, slots=True)
class Event:
    index: int
    time: float
    position: float
    velocity_before: float
    velocity_after: float
    weight_before: float
    weight_after: float
    cell: int
    collision: bool = False
    boundary: bool = False
    crossing: bool = False
    absorbed: bool = False
    exited: bool = False
    final: bool = False
    # filled for events that start a flight, zero on the final event
    flight_length: float = 0.0
    reach: float = 0.0

    @property
    def starts_flight(self) -> bool:
        return not self.final

    def trace_line(self) -> str:
        return (
            f"{self.index} {self.time:.17g} {self.position:.17g} {self.velocity_after:.17g} "
            f"{self.weight_after:.17g} {int(self.collision)} {int(self.boundary)} "
            f"{int(self.crossing)} {int(self.absorbed)} {int(self.exited)}"
        )


@dataclass(slots=True)
class ParticlePath:
    sim: SimKind
    events: List[Event] = field(default_factory=list)
    terminal: Optional[Terminal] = None

    @property
    def collisions(self) -> int:
        return sum(1 for e in self.events if e.collision)

    @property
    def final(self) -> Event:
        return self.events[-1]

    @property
    def track_length(self) -> float:
        return math.fsum(e.flight_length for e in self.events)

    def trace_lines(self) -> List[str]:
        return [e.trace_line() for e in self.events]


# ==========================================
# Flight sampling and weights
# ==========================================

def _flight_rate(cell: GridCell, kind: SimKind) -> float:
    return cell.rate_scatter if kind == SimKind.NON_ANALOG_TRACK_LENGTH else cell.rate_total


def sample_flight(cell: GridCell, x: float, v: float, kind: SimKind, rng: np.random.Generator) -> float:
    """Free-flight distance to the next collision; infinite when the flight rate is zero."""
    rate = _flight_rate(cell, kind)
    if rate <= 0.0:
        return math.inf
    return rng.standard_exponential() * abs(v) / rate


def next_event(bg: Background, x: float, v: float, kind: SimKind, rng: np.random.Generator, cell_index: int) -> Flight:
    """Race a sampled collision against the cell edge ahead; ties go to the collision."""
    cell = bg.cells[cell_index]
    d_collision = sample_flight(cell, x, v, kind, rng)
    if v > 0:
        reach = max(cell.upper - x, 0.0)
        at_domain_edge = cell_index == len(bg.cells) - 1
    else:
        reach = max(x - cell.lower, 0.0)
        at_domain_edge = cell_index == 0

    if d_collision <= reach:
        return Flight(FlightKind.COLLISION, d_collision, reach)
    return Flight(FlightKind.BOUNDARY if at_domain_edge else FlightKind.CROSSING, reach, reach)


def apply_weight(kind: SimKind, cell: GridCell, flight_kind: str, w: float, distance: float, speed: float) -> float:
    """Weight after the event a flight of the given length ended in."""
    if kind == SimKind.NON_ANALOG_COLLISION:
        if flight_kind == FlightKind.COLLISION:
            return w * (1.0 - cell.rate_absorb / cell.rate_total)
        return w
    if kind == SimKind.NON_ANALOG_TRACK_LENGTH:
        return w * math.exp(-cell.rate_absorb / speed * distance)
    return w


def draw_velocity(cell: GridCell, rng: np.random.Generator, min_speed_fraction: float = MIN_SPEED_FRACTION) -> float:
    law = cell.postcoll
    if not isinstance(law, Maxwellian):
        return sample_postcollision(law, rng)
    floor = min_speed_fraction * law.sigma
    for _ in range(MAX_SPEED_REDRAWS):
        v = sample_postcollision(law, rng)
        if abs(v) >= floor and v != 0.0:
            return v
    raise DegenerateVelocityError(f"could not draw a speed above {floor} from {law}")


# ==========================================
# Path simulation
# ==========================================

def simulate_path(
    bg: Background,
    kind: SimKind,
    rng: np.random.Generator,
    *,
    weight_cutoff: float = WEIGHT_CUTOFF,
    min_speed_fraction: float = MIN_SPEED_FRACTION,
    max_events: int = MAX_EVENTS,
) -> ParticlePath:
    x, v = bg.source.sample(rng)
    if v == 0.0:
        raise DegenerateVelocityError("source velocity is zero")
    cell_j = bg.cell_index(x, v)

    path = ParticlePath(sim=kind)
    t = 0.0
    w = 1.0
    # pending event state: (velocity_before, weight_before, flags)
    v_before, w_before = v, 1.0
    flags = {}
    terminal: Optional[Terminal] = None

    for k in range(max_events):
        if terminal is not None:
            path.events.append(Event(
                index=k, time=t, position=x,
                velocity_before=v_before, velocity_after=v,
                weight_before=w_before, weight_after=w,
                cell=cell_j, final=True, **flags,
            ))
            path.terminal = terminal
            return path

        flight = next_event(bg, x, v, kind, rng, cell_j)
        path.events.append(Event(
            index=k, time=t, position=x,
            velocity_before=v_before, velocity_after=v,
            weight_before=w_before, weight_after=w,
            cell=cell_j, flight_length=flight.distance, reach=flight.reach,
            **flags,
        ))

        cell = bg.cells[cell_j]
        speed = abs(v)
        if flight.kind == FlightKind.COLLISION:
            x = x + math.copysign(flight.distance, v)
        elif v > 0:
            x = cell.upper
        else:
            x = cell.lower
        t += flight.distance / speed
        v_before, w_before = v, w
        w = apply_weight(kind, cell, flight.kind, w, flight.distance, speed)
        flags = {}

        if flight.kind == FlightKind.COLLISION:
            flags["collision"] = True
            absorbed = kind == SimKind.ANALOG and rng.random() * cell.rate_total < cell.rate_absorb
            if absorbed:
                flags["absorbed"] = True
                terminal = Terminal.ABSORBED_IN_VOLUME
            else:
                v = draw_velocity(cell, rng, min_speed_fraction)
        elif flight.kind == FlightKind.BOUNDARY:
            flags["boundary"] = True
            side = 1 if v > 0 else -1
            alpha = bg.alpha(side)
            exits = alpha >= 1.0 or (alpha > 0.0 and rng.random() < alpha)
            if exits:
                flags["exited"] = True
                terminal = Terminal.EXITED_BOUNDARY
            else:
                v = reflect(v)
        else:
            flags["crossing"] = True
            cell_j += 1 if v > 0 else -1

        if terminal is None and kind != SimKind.ANALOG and w < weight_cutoff:
            terminal = Terminal.WEIGHT_CUTOFF

    raise TransportError(f"path did not terminate within {max_events} events")


def check_path(path: ParticlePath, bg: Background, rtol: float = 1e-12) -> None:
    """Verify the kinematic and weight contracts of a finished path."""
    events = path.events
    if not events or path.terminal is None or not events[-1].final:
        raise ContractViolationError("path is not terminated")
    for prev, cur in zip(events, events[1:]):
        expected = prev.position + prev.velocity_after * (cur.time - prev.time)
        if abs(cur.position - expected) > rtol * max(1.0, bg.length):
            raise ContractViolationError(f"event {cur.index} is off the flight line: {cur.position} vs {expected}")
        if cur.time < prev.time:
            raise ContractViolationError(f"event {cur.index} goes back in time")
        if path.sim == SimKind.ANALOG and cur.weight_after != 1.0:
            raise ContractViolationError("analog weights must stay 1")
        if cur.weight_after > prev.weight_after * (1.0 + rtol):
            raise ContractViolationError(f"weight grows at event {cur.index}")
        if not bg.lower - rtol <= cur.position <= bg.upper + rtol:
            raise ContractViolationError(f"event {cur.index} left the domain")
    tol = rtol * max(1.0, bg.length)
    for e in events:
        if not 0 <= e.cell < len(bg.cells):
            raise ContractViolationError(f"event {e.index} names cell {e.cell} of {len(bg.cells)}")
        cell = bg.cells[e.cell]
        if not cell.lower - tol <= e.position <= cell.upper + tol:
            raise ContractViolationError(f"event {e.index} at {e.position} lies outside its cell [{cell.lower}, {cell.upper}]")
        # an edge position belongs to the cell the particle is leaving through it
        if e.starts_flight and e.reach > 0.0:
            ahead = cell.upper - e.position if e.velocity_after > 0 else e.position - cell.lower
            if abs(ahead - e.reach) > tol:
                raise ContractViolationError(f"event {e.index} reach {e.reach} does not match cell {e.cell}")
