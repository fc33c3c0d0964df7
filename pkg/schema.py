from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, model_validator


class TransportError(Exception):
    """Base class for every error raised by the transport benchmark."""


class InvalidArgumentError(TransportError, ValueError):
    pass


class DegenerateVelocityError(TransportError):
    pass


class ContractViolationError(TransportError):
    pass


class ConvergenceError(TransportError):
    pass


class EmptyInputError(TransportError, ValueError):
    pass


class GateFailure(TransportError):
    pass


class SimKind(str, Enum):
    """The three ways a history can be generated."""
    ANALOG = "a"
    NON_ANALOG_COLLISION = "nac"
    NON_ANALOG_TRACK_LENGTH = "natl"


class EstimatorKind(str, Enum):
    ANALOG_ABS = "a_abs"
    ANALOG_SCAT = "a_sc"
    COLLISION = "c"
    TRACK_LENGTH = "tl"
    NEXT_EVENT = "ne"


class Quantity(str, Enum):
    COLLISION_COUNT = "collisions"
    ABSORPTION_COUNT = "absorptions"
    SCATTER_COUNT = "scatterings"
    MASS = "mass"
    MOMENTUM = "momentum"


class Terminal(str, Enum):
    ABSORBED_IN_VOLUME = "absorbed"
    EXITED_BOUNDARY = "exited"
    WEIGHT_CUTOFF = "cutoff"


class Metric(str, Enum):
    VARIANCE = "variance"
    COST = "cost"


class Setting(str, Enum):
    ONE_D0D = "1d0d"
    ONE_D1D = "1d1d"


class Procedure(BaseModel):
    """A (simulation type, estimator) pair; hashable so it can key dicts."""
    model_config = ConfigDict(frozen=True)

    sim: SimKind
    est: EstimatorKind

    @model_validator(mode="after")
    def analog_estimators_need_analog_paths(self) -> "Procedure":
        if self.est in (EstimatorKind.ANALOG_ABS, EstimatorKind.ANALOG_SCAT) and self.sim != SimKind.ANALOG:
            raise ValueError(f"estimator {self.est.value} only combines with analog simulation")
        return self

    @property
    def name(self) -> str:
        if self.est == EstimatorKind.ANALOG_ABS:
            return "a_a_abs"
        if self.est == EstimatorKind.ANALOG_SCAT:
            return "a_a_sc"
        return f"{self.sim.value}_{self.est.value}"

    @property
    def order(self) -> int:
        return PROCEDURE_NAMES.index(self.name)

    @classmethod
    def parse(cls, name: str) -> "Procedure":
        try:
            return _BY_NAME[name.strip().lower()]
        except KeyError:
            raise InvalidArgumentError(f"unknown procedure '{name}' (expected one of {', '.join(PROCEDURE_NAMES)})")

    def __str__(self):
        return self.name


# Enum order doubles as the deterministic tie-break order.
PROCEDURE_NAMES: List[str] = [
    "a_a_abs", "a_a_sc",
    "a_c", "nac_c", "natl_c",
    "a_tl", "nac_tl", "natl_tl",
    "a_ne", "nac_ne", "natl_ne",
]

_ESTIMATOR_BY_SUFFIX = {
    "c": EstimatorKind.COLLISION,
    "tl": EstimatorKind.TRACK_LENGTH,
    "ne": EstimatorKind.NEXT_EVENT,
    # next-event rows are labelled "ex" (expected value) in some tables
    "ex": EstimatorKind.NEXT_EVENT,
}


def _build_registry() -> dict:
    registry = {
        "a_a_abs": Procedure(sim=SimKind.ANALOG, est=EstimatorKind.ANALOG_ABS),
        "a_a_sc": Procedure(sim=SimKind.ANALOG, est=EstimatorKind.ANALOG_SCAT),
    }
    for sim in SimKind:
        for suffix, est in _ESTIMATOR_BY_SUFFIX.items():
            registry[f"{sim.value}_{suffix}"] = Procedure(sim=sim, est=est)
    return registry


_BY_NAME = _build_registry()

ALL_PROCEDURES: List[Procedure] = [_BY_NAME[n] for n in PROCEDURE_NAMES]


def procedures_from_names(names: Optional[List[str]]) -> List[Procedure]:
    if not names:
        return list(ALL_PROCEDURES)
    unique = {Procedure.parse(n) for n in names}
    return sorted(unique, key=lambda p: p.order)
