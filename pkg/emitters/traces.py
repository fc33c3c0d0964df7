import os
from base_emitter import BaseEmitter, EmitContext, EmitResult

HEADER = "# k T x v w c b g a beta"


class TracesEmitter(BaseEmitter):
    name: str = "traces"
    description: str = "Event-by-event dumps of the first paths of every procedure."
    filename: str = "traces"

    async def emit(self, ctx: EmitContext) -> EmitResult:
        if ctx.partition is None or not ctx.settings.output.dump_traces:
            return EmitResult(output=None)
        directory = self.target(ctx)
        os.makedirs(directory, exist_ok=True)
        written = 0
        for outcome in ctx.partition.points:
            for proc, paths in outcome.traces.items():
                path = os.path.join(directory, f"point{outcome.point.index:04d}_{proc}.txt")
                with open(path, "w", encoding="utf-8") as f:
                    f.write(f"# {outcome.point.label()} {proc}\n{HEADER}\n")
                    for i, lines in enumerate(paths):
                        f.write(f"# path {i}\n")
                        f.write("\n".join(lines) + "\n")
                written += 1
        return EmitResult(output=f"{written} trace files in {directory}")
