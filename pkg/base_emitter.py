import math
import os
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from config import Settings


def format_value(value: Any) -> str:
    """Round-trippable text for numbers; infinities are written as 'inf'."""
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


class EmitResult(BaseModel):
    output: Any = Field(default=None)
    error: Optional[str] = Field(default=None)

    def __str__(self):
        return f"Error: {self.error}" if self.error else str(self.output)


class EmitContext(BaseModel):
    """Everything an emitter may write: a finished sweep and/or an imbedding trajectory."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    settings: Settings
    out_dir: str
    partition: Any = None
    trajectory: Any = None


class BaseEmitter(ABC, BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    description: str
    filename: str = ""

    def target(self, ctx: EmitContext) -> str:
        return os.path.join(ctx.out_dir, self.filename)

    @abstractmethod
    async def emit(self, ctx: EmitContext) -> Any:
        pass


class EmitterCollection:
    """A collection of output emitters."""

    def __init__(self, *emitters: BaseEmitter):
        self.emitters = emitters
        self.emitter_map = {e.name: e for e in emitters}

    def __iter__(self):
        return iter(self.emitters)

    async def execute(self, *, name: str, ctx: EmitContext) -> EmitResult:
        emitter = self.emitter_map.get(name)
        if not emitter:
            return EmitResult(error=f"Emitter {name} is invalid")
        try:
            result = await emitter.emit(ctx)
            if isinstance(result, EmitResult):
                return result
            return EmitResult(output=result)
        except Exception as e:
            return EmitResult(error=f"{name}: {e}")

    async def emit_all(self, ctx: EmitContext) -> Dict[str, EmitResult]:
        try:
            os.makedirs(ctx.out_dir, exist_ok=True)
        except OSError as e:
            return {"output_dir": EmitResult(error=f"cannot create {ctx.out_dir}: {e}")}
        return {e.name: await self.execute(name=e.name, ctx=ctx) for e in self.emitters}

    def get_emitter(self, name: str) -> BaseEmitter:
        return self.emitter_map.get(name)

    def names(self) -> List[str]:
        return list(self.emitter_map)
