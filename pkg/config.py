import os
import toml
from loguru import logger
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from typing import List, Optional

from schema import (
    InvalidArgumentError,
    Metric,
    PROCEDURE_NAMES,
    Procedure,
    Quantity,
    Setting,
    procedures_from_names,
)

DEFAULT_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.toml")


class SweepSettings(BaseModel):
    setting: Setting = Setting.ONE_D0D
    quantity: Quantity = Quantity.MASS
    metric: Metric = Metric.VARIANCE
    particles: int = Field(100_000, ge=1000)
    repetitions: int = Field(20, ge=3)
    seed: int = Field(20201019, ge=0)
    length: float = Field(1.0, gt=0)
    threads: int = Field(4, ge=1)
    common_random_numbers: bool = False
    procedures: List[str] = list(PROCEDURE_NAMES)
    default_procedure: Optional[str] = None

    @field_validator("quantity")
    @classmethod
    def only_sweepable_quantities(cls, q: Quantity) -> Quantity:
        if q not in (Quantity.MASS, Quantity.MOMENTUM):
            raise ValueError("a sweep scores either mass or momentum")
        return q

    @field_validator("procedures")
    @classmethod
    def known_procedures(cls, names: List[str]) -> List[str]:
        if not names:
            raise ValueError("at least one procedure must be enabled")
        return [p.name for p in procedures_from_names(names)]

    def enabled_procedures(self) -> List[Procedure]:
        return procedures_from_names(self.procedures)

    def default(self) -> Procedure:
        """The incumbent procedure gains are quoted against."""
        if self.default_procedure:
            return Procedure.parse(self.default_procedure)
        return Procedure.parse("a_tl" if self.quantity == Quantity.MASS else "a_c")


class GridSettings(BaseModel):
    survival: List[float] = [0.25, 0.5, 0.75]
    collisionality: List[float] = [0.1, 0.3, 1.0, 3.0, 10.0]
    pr: List[float] = [0.0, 0.25, 0.5, 0.75, 1.0]
    # 1D1D only; when both are given they replace the pr axis pairwise.
    mu: Optional[List[float]] = None
    sigma: Optional[List[float]] = None

    @field_validator("survival", "pr")
    @classmethod
    def unit_interval(cls, values: List[float]) -> List[float]:
        for v in values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{v} is outside [0, 1]")
        return values

    @field_validator("collisionality")
    @classmethod
    def positive(cls, values: List[float]) -> List[float]:
        for v in values:
            if v <= 0.0:
                raise ValueError(f"collisionality {v} must be > 0")
        return values

    @model_validator(mode="after")
    def paired_velocity_axes(self) -> "GridSettings":
        if (self.mu is None) != (self.sigma is None):
            raise ValueError("mu and sigma must be given together")
        if self.mu is not None:
            if len(self.mu) != len(self.sigma):
                raise ValueError("mu and sigma must have the same length")
            if any(s <= 0 for s in self.sigma):
                raise ValueError("sigma values must be > 0")
        return self


class SelectionSettings(BaseModel):
    level: float = Field(0.95, gt=0.0, lt=1.0)
    gate_sigmas: float = Field(4.0, gt=0.0)
    lux_sigmas: float = Field(3.0, gt=0.0)


class TransportSettings(BaseModel):
    weight_cutoff: float = Field(1e-12, ge=0.0)
    min_speed_fraction: float = Field(1e-9, ge=0.0)
    max_events: int = Field(10_000_000, ge=1)


class OutputSettings(BaseModel):
    directory: str = "outputs"
    emitters: List[str] = ["results_csv", "partition_json", "gain_csv", "manifest"]
    dump_traces: bool = False
    trace_paths: int = Field(5, ge=0)


class ImbeddingSettings(BaseModel):
    dx: float = Field(0.01, gt=0.0)
    rtol: float = Field(1e-8, gt=0.0)
    max_halvings: int = Field(12, ge=0)


class LoggingSettings(BaseModel):
    level: str = "INFO"
    file: str = ""


class Settings(BaseModel):
    sweep: SweepSettings = SweepSettings()
    grid: GridSettings = GridSettings()
    selection: SelectionSettings = SelectionSettings()
    transport: TransportSettings = TransportSettings()
    output: OutputSettings = OutputSettings()
    imbedding: ImbeddingSettings = ImbeddingSettings()
    logging: LoggingSettings = LoggingSettings()

    @classmethod
    def load(cls, path: Optional[str] = None, strict: bool = False) -> "Settings":
        """
        Read settings from a toml file. A missing or broken file falls back to
        defaults with a warning unless strict is set (the CLI passes strict for
        an explicit --config).
        """
        config_path = path or DEFAULT_CONFIG

        config_temp = {}
        if os.path.exists(config_path):
            try:
                with open(config_path, "r", encoding="utf-8") as f:
                    config_temp = toml.load(f)
            except Exception as e:
                if strict:
                    raise InvalidArgumentError(f"cannot read {config_path}: {e}")
                logger.warning(f"Failed to load {config_path}: {e}")
        elif strict:
            raise InvalidArgumentError(f"config file {config_path} does not exist")

        try:
            return cls(**config_temp)
        except ValidationError as e:
            if strict:
                raise InvalidArgumentError(f"invalid configuration in {config_path}: {e}")
            logger.warning(f"Invalid configuration in {config_path}, using defaults: {e}")
            return cls()

    @classmethod
    def preset(cls, name: str) -> "Settings":
        """Named variants of the default sweep."""
        if name == "default":
            return cls()
        if name == "momentum-high-survival":
            return cls(
                sweep=SweepSettings(quantity=Quantity.MOMENTUM),
                grid=GridSettings(survival=[0.25, 0.5, 0.75, 0.94, 0.98]),
            )
        raise InvalidArgumentError(f"unknown preset '{name}'")

    def with_overrides(self, **overrides) -> "Settings":
        """Apply CLI overrides (None means 'not given') to the sweep section."""
        given = {k: v for k, v in overrides.items() if v is not None}
        if not given:
            return self
        data = self.model_dump()
        data["sweep"].update(given)
        return Settings(**data)
