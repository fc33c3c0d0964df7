"""
Compiled batch scoring: simulate and score many paths without building
Event records.

The kernel follows simulate_path and score_event draw for draw, so a
procedure's paths consume the random stream in the same order whichever
backend runs them. When numba is missing the batch falls back to the
event-record path in transport.py.
"""
import math
from typing import NamedTuple

import numpy as np
from loguru import logger

from estimators import score_path_total
from model import Background, ForwardBackward
from schema import DegenerateVelocityError, EstimatorKind, Procedure, Quantity, SimKind, Terminal, TransportError
from transport import MAX_EVENTS, MAX_SPEED_REDRAWS, MIN_SPEED_FRACTION, WEIGHT_CUTOFF, simulate_path

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

SIM_A, SIM_NAC, SIM_NATL = range(3)
EST_A_ABS, EST_A_SC, EST_C, EST_TL, EST_NE = range(5)
Q_COLLISIONS, Q_ABSORPTIONS, Q_SCATTERINGS, Q_MASS, Q_MOMENTUM = range(5)
LAW_FORWARD_BACKWARD, LAW_MAXWELLIAN = range(2)

STATUS_OK = 0
STATUS_DEGENERATE = 1
STATUS_RUNAWAY = 2


class BatchScores(NamedTuple):
    scores: np.ndarray
    collisions: np.ndarray
    cutoffs: int


class PackedBackground(NamedTuple):
    lower: np.ndarray
    upper: np.ndarray
    rate_absorb: np.ndarray
    rate_scatter: np.ndarray
    law_kind: np.ndarray
    # pr for forward/backward, mu for Maxwellian
    law_a: np.ndarray
    # sigma for Maxwellian, unused otherwise
    law_b: np.ndarray
    law_mean: np.ndarray
    alpha_left: float
    alpha_right: float
    x0: float
    v0: float
    start_cell: int


def pack_background(bg: Background) -> PackedBackground:
    laws = [c.postcoll for c in bg.cells]
    x0, v0 = bg.source.x0, bg.source.v0
    return PackedBackground(
        lower=np.array([c.lower for c in bg.cells]),
        upper=np.array([c.upper for c in bg.cells]),
        rate_absorb=np.array([c.rate_absorb for c in bg.cells]),
        rate_scatter=np.array([c.rate_scatter for c in bg.cells]),
        law_kind=np.array([LAW_FORWARD_BACKWARD if isinstance(l, ForwardBackward) else LAW_MAXWELLIAN for l in laws], dtype=np.int64),
        law_a=np.array([l.pr if isinstance(l, ForwardBackward) else l.mu for l in laws]),
        law_b=np.array([0.0 if isinstance(l, ForwardBackward) else l.sigma for l in laws]),
        law_mean=np.array([l.mean() for l in laws]),
        alpha_left=bg.alpha_left,
        alpha_right=bg.alpha_right,
        x0=x0,
        v0=v0,
        start_cell=bg.cell_index(x0, v0),
    )


def procedure_codes(proc: Procedure, q: Quantity):
    return list(SimKind).index(proc.sim), list(EstimatorKind).index(proc.est), list(Quantity).index(q)


if HAS_NUMBA:
    @njit(cache=True)
    def _absorption_exchange(q, v):
        if q == Q_SCATTERINGS:
            return 0.0
        if q == Q_MOMENTUM:
            return v
        return 1.0

    @njit(cache=True)
    def _scattering_exchange(q, v, v_after):
        if q == Q_COLLISIONS or q == Q_SCATTERINGS:
            return 1.0
        if q == Q_MOMENTUM:
            return v - v_after
        return 0.0

    @njit(cache=True)
    def _collision_factor(q, ra, rs, mean, v):
        rt = ra + rs
        return (ra / rt) * _absorption_exchange(q, v) + (rs / rt) * _scattering_exchange(q, v, mean)

    @njit(cache=True)
    def _decayed_fraction(rate_t, rate_a, d):
        if rate_a == 0.0:
            return rate_t * d
        return -(rate_t / rate_a) * math.expm1(-rate_a * d)

    @njit(cache=True)
    def _draw_velocity(rng, kind, a, b, floor):
        if kind == LAW_FORWARD_BACKWARD:
            if rng.random() < a:
                return 1.0, True
            return -1.0, True
        for _ in range(MAX_SPEED_REDRAWS):
            v = a + b * rng.standard_normal()
            if abs(v) >= floor and v != 0.0:
                return v, True
        return 0.0, False

    @njit(cache=True)
    def _score_paths_jit(
        rng, n, sim, est, q,
        lower, upper, ra, rs, law_kind, law_a, law_b, law_mean,
        alpha_left, alpha_right, x0, v0, start_cell,
        weight_cutoff, min_speed_fraction, max_events,
        scores, collisions,
    ):
        ncell = lower.shape[0]
        cutoffs = 0
        flight_family = est == EST_TL or est == EST_NE
        for i in range(n):
            x = x0
            v = v0
            j = start_cell
            w = 1.0
            total = 0.0
            ncoll = 0
            done = False
            for _ in range(max_events):
                rt = ra[j] + rs[j]
                rate = rs[j] if sim == SIM_NATL else rt
                speed = abs(v)
                if v > 0:
                    reach = max(upper[j] - x, 0.0)
                    at_edge = j == ncell - 1
                else:
                    reach = max(x - lower[j], 0.0)
                    at_edge = j == 0
                d = math.inf
                if rate > 0.0:
                    d = rng.standard_exponential() * speed / rate
                hit = d <= reach
                dist = d if hit else reach

                if flight_family:
                    c = _collision_factor(q, ra[j], rs[j], law_mean[j], v)
                    sigma_t = rt / speed
                    if est == EST_NE:
                        total += w * c * -math.expm1(-sigma_t * reach)
                    elif sim == SIM_NATL:
                        total += w * c * _decayed_fraction(sigma_t, ra[j] / speed, dist)
                    else:
                        total += w * c * sigma_t * dist

                v_before = v
                w_before = w
                if hit:
                    x = x + math.copysign(dist, v)
                elif v > 0:
                    x = upper[j]
                else:
                    x = lower[j]
                if sim == SIM_NAC:
                    if hit:
                        w = w * (1.0 - ra[j] / rt)
                elif sim == SIM_NATL:
                    w = w * math.exp(-ra[j] / speed * dist)

                terminal = False
                if hit:
                    ncoll += 1
                    absorbed = False
                    if sim == SIM_A:
                        absorbed = rng.random() * rt < ra[j]
                    if absorbed:
                        terminal = True
                    else:
                        v, ok = _draw_velocity(rng, law_kind[j], law_a[j], law_b[j], min_speed_fraction * law_b[j])
                        if not ok:
                            return cutoffs, STATUS_DEGENERATE
                    if not flight_family:
                        if est == EST_A_ABS:
                            if absorbed:
                                total += _absorption_exchange(q, v_before) + (rs[j] / ra[j]) * _scattering_exchange(q, v_before, law_mean[j])
                        elif est == EST_A_SC:
                            if not absorbed:
                                total += _scattering_exchange(q, v_before, v) + (ra[j] / rs[j]) * _absorption_exchange(q, v_before)
                        else:
                            c = _collision_factor(q, ra[j], rs[j], law_mean[j], v_before)
                            if sim == SIM_A:
                                total += c
                            elif sim == SIM_NAC:
                                total += w_before * c
                            else:
                                total += w * (rt / rs[j]) * c
                elif at_edge:
                    alpha = alpha_right if v > 0 else alpha_left
                    if alpha >= 1.0 or (alpha > 0.0 and rng.random() < alpha):
                        terminal = True
                    else:
                        v = -v
                elif v > 0:
                    j += 1
                else:
                    j -= 1

                if not terminal and sim != SIM_A and w < weight_cutoff:
                    terminal = True
                    cutoffs += 1
                if terminal:
                    done = True
                    break
            if not done:
                return cutoffs, STATUS_RUNAWAY
            scores[i] = total
            collisions[i] = ncoll
        return cutoffs, STATUS_OK


def _score_paths_python(proc, q, bg, rng, count, weight_cutoff, min_speed_fraction, max_events) -> BatchScores:
    scores = np.empty(count)
    collisions = np.empty(count)
    cutoffs = 0
    for i in range(count):
        path = simulate_path(
            bg, proc.sim, rng,
            weight_cutoff=weight_cutoff,
            min_speed_fraction=min_speed_fraction,
            max_events=max_events,
        )
        scores[i] = score_path_total(proc, q, path, bg)
        collisions[i] = path.collisions
        if path.terminal == Terminal.WEIGHT_CUTOFF:
            cutoffs += 1
    return BatchScores(scores, collisions, cutoffs)


def score_batch(
    proc: Procedure,
    q: Quantity,
    bg: Background,
    rng: np.random.Generator,
    count: int,
    *,
    weight_cutoff: float = WEIGHT_CUTOFF,
    min_speed_fraction: float = MIN_SPEED_FRACTION,
    max_events: int = MAX_EVENTS,
    compiled: bool = True,
) -> BatchScores:
    """Per-path total scores and collision counts for `count` fresh paths."""
    if count <= 0:
        return BatchScores(np.empty(0), np.empty(0), 0)
    if not (compiled and HAS_NUMBA):
        return _score_paths_python(proc, q, bg, rng, count, weight_cutoff, min_speed_fraction, max_events)

    packed = pack_background(bg)
    if packed.v0 == 0.0:
        raise DegenerateVelocityError("source velocity is zero")
    sim, est, qc = procedure_codes(proc, q)
    scores = np.zeros(count)
    collisions = np.zeros(count)
    cutoffs, status = _score_paths_jit(
        rng, count, sim, est, qc,
        packed.lower, packed.upper, packed.rate_absorb, packed.rate_scatter,
        packed.law_kind, packed.law_a, packed.law_b, packed.law_mean,
        packed.alpha_left, packed.alpha_right, packed.x0, packed.v0, packed.start_cell,
        weight_cutoff, min_speed_fraction, max_events,
        scores, collisions,
    )
    if status == STATUS_DEGENERATE:
        raise DegenerateVelocityError(f"could not draw a post-collision speed above {min_speed_fraction:g} sigma")
    if status == STATUS_RUNAWAY:
        raise TransportError(f"path did not terminate within {max_events} events")
    return BatchScores(scores, collisions, int(cutoffs))


if not HAS_NUMBA:
    logger.warning("numba is not installed; paths are simulated one event record at a time")
