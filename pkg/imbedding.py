"""
Moment equations for the non-analog collision simulation in a homogeneous
forward/backward slab, written as ODEs in the slab length.

For a particle entering on the left, each exit outcome o (ll: leaves on the
left, lr: leaves on the right) carries six outcome-restricted moments of the
final weight W and the track-length score T:

    P_o, E[W; o], E[W^2; o], E[T; o], E[TW; o], E[T^2; o]

Adding a thin layer on the entry side and sorting histories by what happens
inside it gives a closed quadratic system. Right-entry moments follow from the
same system with pr replaced by 1 - pr.
"""
import math
from typing import Dict, Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from model import ParamPoint1D0D
from schema import ContractViolationError, ConvergenceError, InvalidArgumentError, Quantity

OUTCOMES = ("ll", "lr")
MOMENTS = ("p", "w", "w2", "t", "tw", "t2")
STATE_SIZE = len(OUTCOMES) * len(MOMENTS)
COLUMNS = [f"{m}_{o}" for o in OUTCOMES for m in MOMENTS]

ScoreKind = Literal["total", "absorb", "scatter"]


class IIParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma_a: float = Field(ge=0.0)
    sigma_s: float = Field(ge=0.0)
    pr: float = Field(ge=0.0, le=1.0)
    score: ScoreKind = "total"
    # "printed" drops the P_ll factor on the turn-around term of the
    # left-exit second moment
    closure: Literal["derived", "printed"] = "derived"

    @model_validator(mode="after")
    def positive_total(self) -> "IIParams":
        if self.sigma_a + self.sigma_s <= 0.0:
            raise ValueError("sigma_t must be positive")
        return self

    @property
    def sigma_t(self) -> float:
        return self.sigma_a + self.sigma_s

    @property
    def score_sigma(self) -> float:
        return {"total": self.sigma_t, "absorb": self.sigma_a, "scatter": self.sigma_s}[self.score]

    @classmethod
    def from_point(cls, p: ParamPoint1D0D, length: float, quantity: Quantity = Quantity.COLLISION_COUNT, **kwargs) -> "IIParams":
        if not length > 0.0:
            raise InvalidArgumentError(f"length must be positive, got {length}")
        score = {
            Quantity.COLLISION_COUNT: "total",
            Quantity.ABSORPTION_COUNT: "absorb",
            Quantity.MASS: "absorb",
            Quantity.SCATTER_COUNT: "scatter",
        }.get(quantity)
        if score is None:
            raise InvalidArgumentError(f"no moment equations for {quantity.value}")
        sigma_t = p.collisionality / length
        return cls(sigma_a=(1.0 - p.survival) * sigma_t, sigma_s=p.survival * sigma_t, pr=p.pr, score=score, **kwargs)


def mirrored(p: IIParams) -> IIParams:
    """Parameters whose left-entry moments are the right-entry moments of p."""
    return p.model_copy(update={"pr": 1.0 - p.pr})


class MomentState(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float = 0.0
    p_ll: float = 0.0
    w_ll: float = 0.0
    w2_ll: float = 0.0
    t_ll: float = 0.0
    tw_ll: float = 0.0
    t2_ll: float = 0.0
    p_lr: float = 1.0
    w_lr: float = 1.0
    w2_lr: float = 1.0
    t_lr: float = 0.0
    tw_lr: float = 0.0
    t2_lr: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in COLUMNS])

    @classmethod
    def from_array(cls, y: np.ndarray, x: float = 0.0) -> "MomentState":
        return cls(x=x, **{c: float(v) for c, v in zip(COLUMNS, y)})

    @property
    def score_mean(self) -> float:
        return self.t_ll + self.t_lr

    @property
    def score_second_moment(self) -> float:
        return self.t2_ll + self.t2_lr

    @property
    def score_variance(self) -> float:
        return self.score_second_moment - self.score_mean ** 2

    def check(self, tol: float = 1e-9) -> None:
        """Probability and Cauchy-Schwarz bounds; raises ContractViolationError."""
        for o in OUTCOMES:
            prob = getattr(self, f"p_{o}")
            if not -tol <= prob <= 1.0 + tol:
                raise ContractViolationError(f"P_{o} = {prob} at x = {self.x}")
            tw, t2, w2 = getattr(self, f"tw_{o}"), getattr(self, f"t2_{o}"), getattr(self, f"w2_{o}")
            if tw * tw > t2 * w2 + tol * max(1.0, t2 * w2):
                raise ContractViolationError(f"E[TW; {o}]^2 exceeds E[T^2; {o}] E[W^2; {o}] at x = {self.x}")
        if abs(self.p_ll + self.p_lr - 1.0) > tol:
            raise ContractViolationError(f"P_ll + P_lr = {self.p_ll + self.p_lr} at x = {self.x}")


def initial_state() -> np.ndarray:
    """A slab of zero length: every particle passes with weight 1 and no score."""
    return MomentState().to_array()


def rhs(state, p: IIParams) -> np.ndarray:
    y = state.to_array() if isinstance(state, MomentState) else np.asarray(state, dtype=float)
    st, s = p.sigma_t, p.score_sigma
    c = p.sigma_s / st
    c2 = c * c
    fwd = p.pr * st
    back = (1.0 - p.pr) * st

    P1, A1, B1, M1, N1, Q1 = y[0:6]
    d = np.empty(STATE_SIZE)
    for i in (0, 1):
        P, A, B, M, N, Q = y[6 * i:6 * i + 6]
        removal = 2.0 * st if i == 0 else st
        # forward scatter on entry, then turned around in the old slab and sent back in
        dP = -removal * P + fwd * P + fwd * P1 * P
        dA = -removal * A + fwd * c * A + fwd * c * A1 * A
        dB = -removal * B + fwd * c2 * B + fwd * c2 * B1 * B
        dM = -removal * M + fwd * c * M + fwd * (M1 * P + c * A1 * M)
        dN = -removal * N + fwd * c2 * N + fwd * (c * N1 * A + c2 * B1 * N)
        dQ = -removal * Q + fwd * c2 * Q + fwd * (Q1 * P + 2.0 * c * N1 * M + c2 * B1 * Q)
        if i == 0:
            # backscatter on entry, or a second collision on the way out
            dP += back * (1.0 + P1)
            dA += back * c * (1.0 + A1)
            dB += back * c2 * (1.0 + B1)
            dM += back * M1 + s * (P1 + A1)
            dN += back * c * N1 + s * (A1 + B1)
            dQ += back * Q1 + 2.0 * s * (M1 + N1)
            if p.closure == "printed":
                dQ += fwd * Q1 * (1.0 - P1)
        else:
            dM += s * P
            dN += s * A
            dQ += 2.0 * s * M
        d[6 * i:6 * i + 6] = (dP, dA, dB, dM, dN, dQ)
    return d


def _rk4(p: IIParams, x_end: float, steps: int) -> np.ndarray:
    h = x_end / steps
    y = initial_state()
    out = np.empty((steps + 1, STATE_SIZE))
    out[0] = y
    for i in range(steps):
        k1 = rhs(y, p)
        k2 = rhs(y + 0.5 * h * k1, p)
        k3 = rhs(y + 0.5 * h * k2, p)
        k4 = rhs(y + h * k3, p)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = y
    return out


class Trajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: IIParams
    x: np.ndarray
    states: np.ndarray
    steps: int
    halvings: int
    error: float

    def state(self, i: int = -1) -> MomentState:
        return MomentState.from_array(self.states[i], x=float(self.x[i]))

    def final(self) -> MomentState:
        return self.state(-1)

    def column(self, name: str) -> np.ndarray:
        return self.states[:, COLUMNS.index(name)]

    def check(self, tol: float = 1e-9) -> None:
        for i in range(len(self.x)):
            self.state(i).check(tol)


def integrate(
    p: IIParams,
    x_end: float,
    dx: float,
    rtol: float = 1e-8,
    max_halvings: int = 12,
    atol: float = 1e-14,
) -> Trajectory:
    """
    Classical RK4 on a fixed grid, halving the step until two successive
    refinements agree at every output length.
    """
    if not x_end > 0.0 or not dx > 0.0:
        raise InvalidArgumentError(f"x_end and dx must be positive, got {x_end}, {dx}")
    n = max(1, math.ceil(x_end / dx))
    coarse = _rk4(p, x_end, n)
    error = math.inf
    for halving in range(1, max_halvings + 1):
        stride = 2 ** halving
        fine = _rk4(p, x_end, n * stride)[::stride]
        diff = np.abs(fine - coarse)
        error = float(np.max(diff / (np.abs(fine) + atol / rtol)))
        logger.debug(f"imbedding refinement {halving}: {n * stride} steps, relative change {error:.3e}")
        if np.all(diff <= rtol * np.abs(fine) + atol):
            return Trajectory(
                params=p,
                x=np.linspace(0.0, x_end, n + 1),
                states=fine,
                steps=n * stride,
                halvings=halving,
                error=error,
            )
        coarse = fine
    raise ConvergenceError(
        f"no agreement to {rtol:g} after {max_halvings} halvings "
        f"(sigma_t={p.sigma_t:g}, pr={p.pr:g}, x_end={x_end:g}, last change {error:.3e})"
    )


def nac_tl_statistics(trajectory: Trajectory) -> Dict[str, np.ndarray]:
    """Mean, second moment and variance of the total track-length score at every grid length."""
    mean = trajectory.column("t_ll") + trajectory.column("t_lr")
    second = trajectory.column("t2_ll") + trajectory.column("t2_lr")
    return {"x": trajectory.x, "mean": mean, "second_moment": second, "variance": second - mean ** 2}
