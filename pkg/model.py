import math
from typing import Annotated, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from schema import InvalidArgumentError

# Relative tolerance for cell tiling and edge lookups.
EDGE_RTOL = 1e-12


# ==========================================
# Post-collision velocity laws
# ==========================================

class ForwardBackward(BaseModel):
    """1D0D law: +1 with probability pr, -1 otherwise."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["forward_backward"] = "forward_backward"
    pr: float = Field(ge=0.0, le=1.0)

    def sample(self, rng: np.random.Generator) -> float:
        return 1.0 if rng.random() < self.pr else -1.0

    def mean(self) -> float:
        return 2.0 * self.pr - 1.0

    def second_moment(self) -> float:
        return 1.0

    @property
    def scale(self) -> float:
        return 1.0


class Maxwellian(BaseModel):
    """1D1D law: normal with mean mu and standard deviation sigma."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["maxwellian"] = "maxwellian"
    mu: float
    sigma: float = Field(gt=0.0)

    def sample(self, rng: np.random.Generator) -> float:
        return self.mu + self.sigma * rng.standard_normal()

    def mean(self) -> float:
        return self.mu

    def second_moment(self) -> float:
        return self.mu * self.mu + self.sigma * self.sigma

    @property
    def scale(self) -> float:
        return self.sigma


VelocityLaw = Annotated[Union[ForwardBackward, Maxwellian], Field(discriminator="kind")]


def sample_postcollision(law: VelocityLaw, rng: np.random.Generator) -> float:
    return law.sample(rng)


def reflect(v: float) -> float:
    return -v


# ==========================================
# Geometry
# ==========================================

class GridCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    lower: float
    upper: float
    rate_absorb: float = Field(ge=0.0)
    rate_scatter: float = Field(ge=0.0)
    postcoll: VelocityLaw

    @model_validator(mode="after")
    def check_cell(self) -> "GridCell":
        if not self.upper > self.lower:
            raise ValueError(f"cell [{self.lower}, {self.upper}] is empty")
        if self.rate_absorb + self.rate_scatter <= 0.0:
            raise ValueError("a cell needs a positive total collision rate")
        return self

    @property
    def rate_total(self) -> float:
        return self.rate_absorb + self.rate_scatter

    @property
    def survival(self) -> float:
        return self.rate_scatter / self.rate_total

    @property
    def width(self) -> float:
        return self.upper - self.lower


class InitialLaw(BaseModel):
    """Point source. Every path starts at (x0, v0) with weight 1."""
    model_config = ConfigDict(frozen=True)

    x0: float = 0.0
    v0: float = 1.0

    @field_validator("v0")
    @classmethod
    def moving(cls, v: float) -> float:
        if v == 0.0:
            raise ValueError("the source velocity must be non-zero")
        return v

    def sample(self, rng: np.random.Generator) -> Tuple[float, float]:
        return self.x0, self.v0


class Background(BaseModel):
    model_config = ConfigDict(frozen=True)

    cells: Tuple[GridCell, ...]
    alpha_left: float = Field(1.0, ge=0.0, le=1.0)
    alpha_right: float = Field(1.0, ge=0.0, le=1.0)
    source: InitialLaw = InitialLaw()

    @model_validator(mode="after")
    def check_tiling(self) -> "Background":
        if not self.cells:
            raise ValueError("a background needs at least one cell")
        scale = max(abs(self.cells[0].lower), abs(self.cells[-1].upper), 1.0)
        for left, right in zip(self.cells, self.cells[1:]):
            if abs(left.upper - right.lower) > EDGE_RTOL * scale:
                raise ValueError(f"cells do not tile: gap or overlap at {left.upper} / {right.lower}")
        if not self.lower <= self.source.x0 <= self.upper:
            raise ValueError(f"source position {self.source.x0} lies outside [{self.lower}, {self.upper}]")
        return self

    @property
    def lower(self) -> float:
        return self.cells[0].lower

    @property
    def upper(self) -> float:
        return self.cells[-1].upper

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def alpha(self, side: int) -> float:
        """Exit probability on the left (side < 0) or right (side > 0) boundary."""
        return self.alpha_left if side < 0 else self.alpha_right

    def cell_index(self, x: float, v: float) -> int:
        """Index of the cell a particle at x moving with v is travelling through."""
        n = len(self.cells)
        for j, cell in enumerate(self.cells):
            if cell.lower <= x < cell.upper:
                # on an interior edge a left-mover belongs to the cell behind it
                if v < 0 and x == cell.lower and j > 0:
                    return j - 1
                return j
        if x == self.upper:
            return n - 1
        raise InvalidArgumentError(f"position {x} lies outside [{self.lower}, {self.upper}]")

    def read_back(self) -> "ParamPoint1D0D":
        return read_back(self)


# ==========================================
# Parameter points and mappings
# ==========================================

class ParamPoint1D0D(BaseModel):
    model_config = ConfigDict(frozen=True)

    survival: float = Field(ge=0.0, le=1.0)
    collisionality: float = Field(ge=0.0)
    pr: float = Field(ge=0.0, le=1.0)

    def label(self) -> str:
        return f"s={self.survival:g} ct={self.collisionality:g} pr={self.pr:g}"


def make_1d0d_background(p: ParamPoint1D0D, length: float) -> Background:
    """Single-cell slab [0, length] with forward/backward scattering and a source at (0, +1)."""
    if not length > 0.0:
        raise InvalidArgumentError(f"length must be positive, got {length}")
    if not p.collisionality > 0.0:
        raise InvalidArgumentError("collisionality must be positive to build a background")
    sigma_t = p.collisionality / length
    cell = GridCell(
        lower=0.0,
        upper=length,
        rate_absorb=(1.0 - p.survival) * sigma_t,
        rate_scatter=p.survival * sigma_t,
        postcoll=ForwardBackward(pr=p.pr),
    )
    return Background(cells=(cell,), alpha_left=1.0, alpha_right=1.0, source=InitialLaw(x0=0.0, v0=1.0))


def map_1d1d_to_1d0d(mu: float, sigma: float, survival: float, collisionality: float) -> ParamPoint1D0D:
    """
    Collapse a Maxwellian onto the equivalent forward/backward law: speeds are
    rescaled by the root-mean-square speed and pr is set so the mean matches.
    """
    if not sigma > 0.0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    s = math.hypot(mu, sigma)
    pr = min(1.0, max(0.0, 0.5 * (1.0 + mu / s)))
    return ParamPoint1D0D(survival=survival, collisionality=collisionality / s, pr=pr)


def map_1d0d_to_1d1d(p: ParamPoint1D0D, length: float, speed_scale: float = 1.0) -> Background:
    """Inverse of map_1d1d_to_1d0d with the root-mean-square speed fixed to speed_scale."""
    if not 0.0 < p.pr < 1.0:
        raise InvalidArgumentError(f"pr must lie strictly inside (0, 1) for a Maxwellian, got {p.pr}")
    if not length > 0.0 or not speed_scale > 0.0:
        raise InvalidArgumentError("length and speed_scale must be positive")
    if not p.collisionality > 0.0:
        raise InvalidArgumentError("collisionality must be positive to build a background")
    mu = speed_scale * (2.0 * p.pr - 1.0)
    sigma = 2.0 * speed_scale * math.sqrt(p.pr * (1.0 - p.pr))
    return make_1d1d_background(mu, sigma, p.survival, p.collisionality * speed_scale, length)


def make_1d1d_background(mu: float, sigma: float, survival: float, collisionality: float, length: float) -> Background:
    """Single-cell slab with a Maxwellian post-collision law and total rate collisionality / length."""
    if not length > 0.0:
        raise InvalidArgumentError(f"length must be positive, got {length}")
    if not collisionality > 0.0:
        raise InvalidArgumentError("collisionality must be positive to build a background")
    if not sigma > 0.0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    rate_total = collisionality / length
    cell = GridCell(
        lower=0.0,
        upper=length,
        rate_absorb=(1.0 - survival) * rate_total,
        rate_scatter=survival * rate_total,
        postcoll=Maxwellian(mu=mu, sigma=sigma),
    )
    return Background(cells=(cell,), source=InitialLaw(x0=0.0, v0=1.0))


def read_back(bg: Background) -> ParamPoint1D0D:
    """Recover (survival, collisionality, pr) from a single-cell background."""
    if len(bg.cells) != 1:
        raise InvalidArgumentError("read_back needs a single-cell background")
    cell = bg.cells[0]
    law = cell.postcoll
    if isinstance(law, ForwardBackward):
        return ParamPoint1D0D(
            survival=cell.rate_scatter / cell.rate_total,
            collisionality=cell.rate_total * bg.length,
            pr=law.pr,
        )
    return map_1d1d_to_1d0d(law.mu, law.sigma, cell.survival, cell.rate_total * bg.length)
