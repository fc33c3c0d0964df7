import json
import platform
from datetime import datetime
from importlib.metadata import PackageNotFoundError, version

from base_emitter import BaseEmitter, EmitContext, EmitResult

PACKAGES = ["numpy", "scipy", "pydantic", "loguru", "rich", "toml"]


def package_versions() -> dict:
    versions = {"python": platform.python_version()}
    for name in PACKAGES:
        try:
            versions[name] = version(name)
        except PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class ManifestEmitter(BaseEmitter):
    name: str = "manifest"
    description: str = "Run manifest: seed, package versions, configuration echo and run ledger."
    filename: str = "manifest.json"

    async def emit(self, ctx: EmitContext) -> EmitResult:
        pmap = ctx.partition
        manifest = {
            "created": datetime.now().isoformat(),
            "seed": ctx.settings.sweep.seed,
            "versions": package_versions(),
            "config": ctx.settings.model_dump(mode="json"),
        }
        if pmap is not None:
            manifest["passed"] = pmap.passed
            manifest["failed_points"] = [p.point.index for p in pmap.points if not p.passed]
            manifest["lux_violations"] = {
                str(p.point.index): p.lux_violations for p in pmap.points if p.lux_violations
            }
            manifest["border_conflicts"] = pmap.border_conflicts
            manifest["run"] = pmap.monitor
        if ctx.trajectory is not None:
            traj = ctx.trajectory
            manifest["imbedding"] = {
                "params": traj.params.model_dump(mode="json"),
                "steps": traj.steps,
                "halvings": traj.halvings,
                "error": traj.error,
            }
        path = self.target(ctx)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, default=str)
        return EmitResult(output=path)
