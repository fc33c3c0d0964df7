import json
from base_emitter import BaseEmitter, EmitContext, EmitResult, format_value
from loguru import logger


class PartitionJsonEmitter(BaseEmitter):
    name: str = "partition_json"
    description: str = "Winner grid: best procedure (or 'inconclusive') per parameter point."
    filename: str = "partition.json"

    async def emit(self, ctx: EmitContext) -> EmitResult:
        if ctx.partition is None:
            return EmitResult(output=None)
        sweep = ctx.settings.sweep
        entries = []
        for outcome in ctx.partition.points:
            pt = outcome.point
            sel = outcome.selection
            entries.append({
                "point": pt.index,
                "survival": pt.survival,
                "collisionality": pt.collisionality,
                "pr": pt.pr,
                "mu": pt.mu,
                "sigma": pt.sigma,
                "winner": (sel.best or "inconclusive") if sel else None,
                "leader": sel.leader if sel else None,
                "runner_up": sel.runner_up if sel else None,
                "margin": sel.margin if sel else None,
                "gain": format_value(outcome.gain),
                "skipped": outcome.skipped,
                "gate_passed": outcome.passed,
                "error": outcome.error,
            })
        document = {
            "schema_version": 1,
            "setting": sweep.setting.value,
            "quantity": sweep.quantity.value,
            "metric": sweep.metric.value,
            "level": ctx.settings.selection.level,
            "default_procedure": sweep.default().name,
            "points": entries,
        }
        path = self.target(ctx)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2)
        logger.debug(f"{len(entries)} partition entries in {path}")
        return EmitResult(output=path)
