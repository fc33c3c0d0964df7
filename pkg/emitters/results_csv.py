import csv
from base_emitter import BaseEmitter, EmitContext, EmitResult, format_value
from loguru import logger

# Bump when columns change.
SCHEMA_VERSION = 1

COLUMNS = [
    "point", "setting", "survival", "collisionality", "pr", "mu", "sigma",
    "procedure", "quantity", "metric", "metric_value", "metric_error",
    "estimate", "std_error", "variance", "expected_collisions", "cost",
    "particles", "repetitions",
]


class ResultsCsvEmitter(BaseEmitter):
    name: str = "results_csv"
    description: str = "One row per parameter point, procedure, quantity and metric."
    filename: str = "results.csv"

    async def emit(self, ctx: EmitContext) -> EmitResult:
        if ctx.partition is None:
            return EmitResult(output=None)
        metric = ctx.settings.sweep.metric
        path = self.target(ctx)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(COLUMNS)
            rows = 0
            for outcome in ctx.partition.points:
                pt = outcome.point
                for r in outcome.results:
                    writer.writerow([format_value(v) for v in (
                        pt.index, pt.setting.value, pt.survival, pt.collisionality, pt.pr, pt.mu, pt.sigma,
                        r.name, r.quantity.value, metric.value, r.metric(metric), r.metric_error(metric),
                        r.estimate, r.std_error, r.variance, r.expected_collisions, r.cost,
                        r.particles, r.repetitions,
                    )])
                    rows += 1
        logger.debug(f"{rows} result rows in {path}")
        return EmitResult(output=path)
