import time
from datetime import datetime
from typing import Dict


class RunMonitor:
    """Track paths, collisions, cutoffs and wall time per procedure over a sweep."""

    def __init__(self):
        self.session_stats = {
            "total_paths": 0,
            "total_collisions": 0,
            "total_cutoffs": 0,
            "total_seconds": 0.0,
            "points": 0,
            "by_procedure": {},
            "session_start": datetime.now().isoformat(),
        }
        self._started = time.perf_counter()

    def record(self, procedure: str, paths: int, collisions: int, cutoffs: int, seconds: float):
        self.session_stats["total_paths"] += paths
        self.session_stats["total_collisions"] += collisions
        self.session_stats["total_cutoffs"] += cutoffs

        if procedure not in self.session_stats["by_procedure"]:
            self.session_stats["by_procedure"][procedure] = {
                "paths": 0, "collisions": 0, "cutoffs": 0, "seconds": 0.0
            }
        proc_stats = self.session_stats["by_procedure"][procedure]
        proc_stats["paths"] += paths
        proc_stats["collisions"] += collisions
        proc_stats["cutoffs"] += cutoffs
        proc_stats["seconds"] += seconds

    def point_done(self):
        self.session_stats["points"] += 1

    def cutoff_fraction(self, procedure: str) -> float:
        stats = self.session_stats["by_procedure"].get(procedure)
        if not stats or not stats["paths"]:
            return 0.0
        return stats["cutoffs"] / stats["paths"]

    def to_dict(self) -> Dict:
        self.session_stats["total_seconds"] = time.perf_counter() - self._started
        return self.session_stats

    def get_summary(self) -> str:
        stats = self.to_dict()
        return (
            f"📊 Paths: {stats['total_paths']:,} | "
            f"Collisions: {stats['total_collisions']:,} | "
            f"Points: {stats['points']} | "
            f"Wall time: {stats['total_seconds']:.1f}s"
        )
