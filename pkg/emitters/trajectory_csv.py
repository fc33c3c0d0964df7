import csv
from base_emitter import BaseEmitter, EmitContext, EmitResult, format_value
from imbedding import COLUMNS, nac_tl_statistics


class TrajectoryCsvEmitter(BaseEmitter):
    name: str = "trajectory_csv"
    description: str = "Imbedding moments and the derived track-length score variance against slab length."
    filename: str = "imbedding.csv"

    async def emit(self, ctx: EmitContext) -> EmitResult:
        traj = ctx.trajectory
        if traj is None:
            return EmitResult(output=None)
        score = nac_tl_statistics(traj)
        path = self.target(ctx)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["x"] + COLUMNS + ["score_mean", "score_variance"])
            for i, x in enumerate(traj.x):
                row = [float(x)] + [float(v) for v in traj.states[i]]
                row += [float(score["mean"][i]), float(score["variance"][i])]
                writer.writerow([format_value(v) for v in row])
        return EmitResult(output=path)
