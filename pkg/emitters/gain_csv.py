import csv
from base_emitter import BaseEmitter, EmitContext, EmitResult, format_value


class GainCsvEmitter(BaseEmitter):
    name: str = "gain_csv"
    description: str = "Gain factor of the leading procedure over the default at every point."
    filename: str = "gain.csv"

    async def emit(self, ctx: EmitContext) -> EmitResult:
        if ctx.partition is None:
            return EmitResult(output=None)
        default = ctx.settings.sweep.default().name
        path = self.target(ctx)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["point", "survival", "collisionality", "pr", "default", "leader", "conclusive", "gain"])
            for outcome in ctx.partition.points:
                pt = outcome.point
                sel = outcome.selection
                writer.writerow([
                    pt.index, format_value(pt.survival), format_value(pt.collisionality), format_value(pt.pr),
                    default,
                    sel.leader if sel else "",
                    int(sel.conclusive) if sel else 0,
                    format_value(outcome.gain),
                ])
        return EmitResult(output=path)
