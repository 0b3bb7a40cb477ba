"""Benchmark grid runner writing per-episode and aggregate CSVs plus a wall-time sidecar.

Both main CSVs hold only deterministic quantities so that repeated runs with
the same master seed are byte-identical whatever the worker count. Decision
wall-times live in ``timings.csv`` (the ``mean_decision_ms`` column of the
episodes CSV stays empty unless inline timings are requested).
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..pathcache import precompute_all
from .episode import EpisodeResult, load_world_map, run_episode
from .scenario import ScenarioConfig

EPISODE_COLUMNS = (
    "planner", "m", "seed", "success", "stages", "cost", "mean_decision_ms", "mean_reshuffles",
    "deliveries", "collided", "timed_out", "jtilde0", "bound_violations", "budget_violations",
    "fallback_stages",
)
AGGREGATE_COLUMNS = (
    "planner", "m", "episodes", "successes", "success_rate", "cost_population", "cost_samples",
    "mean_cost", "mean_reshuffles", "max_reshuffles_per_stage", "bound_violation_episodes",
)
TIMING_COLUMNS = ("planner", "m", "seed", "mean_decision_ms", "decisions")

ROLLOUT_PLANNERS = ("MA-Rollout", "MA-Rollout-NoPrecompute", "StandardRollout")


def worker_count() -> int:
    raw = os.environ.get("WRO_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("WRO_THREADS must be >= 0")
    return n


@dataclass
class EpisodeRow:
    planner: str
    m: int
    seed: int
    success: bool
    stages: int
    cost: float
    mean_decision_ms: float
    mean_reshuffles: float
    deliveries: int
    collided: bool
    timed_out: bool
    jtilde0: float | None
    bound_violations: int
    budget_violations: int
    decisions: int
    max_reshuffles: int = 0
    fallback_stages: int = 0

    @classmethod
    def from_result(cls, r: EpisodeResult, C: int = 5) -> "EpisodeRow":
        return cls(r.planner, r.m, r.seed, r.success, r.stages, r.cost, r.mean_decision_ms,
                   r.mean_reshuffles, r.deliveries, r.collided, r.timed_out,
                   r.jtilde[0] if r.jtilde else None, len(r.bound_violations()),
                   len(r.budget_violations(C)), len(r.decision_s), max(r.reshuffles, default=0),
                   r.fallback_stages)

    @property
    def key(self):
        return (self.planner, self.m, self.seed)


@dataclass
class BenchmarkReport:
    rows: list[EpisodeRow] = field(default_factory=list)

    def cells(self) -> list[tuple[str, int]]:
        return sorted({(r.planner, r.m) for r in self.rows})

    def select(self, planner: str, m: int | None = None) -> list[EpisodeRow]:
        return [r for r in self.rows if r.planner == planner and (m is None or r.m == m)]

    def aggregate(self) -> list[dict]:
        out = []
        for planner, m in self.cells():
            rows = self.select(planner, m)
            ok = [r for r in rows if r.success]
            # baselines are averaged over successful episodes, rollout over all of them
            population = "all" if planner in ROLLOUT_PLANNERS else "successful"
            pool = rows if population == "all" else ok
            out.append({
                "planner": planner,
                "m": m,
                "episodes": len(rows),
                "successes": len(ok),
                "success_rate": len(ok) / len(rows),
                "cost_population": population,
                "cost_samples": len(pool),
                "mean_cost": sum(r.cost for r in pool) / len(pool) if pool else "",
                "mean_reshuffles": sum(r.mean_reshuffles for r in rows) / len(rows),
                "max_reshuffles_per_stage": max(r.max_reshuffles for r in rows),
                "bound_violation_episodes": sum(1 for r in rows if r.bound_violations),
            })
        return out

    def success_rate(self, planner: str, m: int) -> float:
        rows = self.select(planner, m)
        return sum(r.success for r in rows) / len(rows)

    def mean_decision_ms(self, planner: str, m: int | None = None) -> float:
        rows = self.select(planner, m)
        return sum(r.mean_decision_ms for r in rows) / len(rows)


def episode_configs(base: ScenarioConfig, planners, ms, episodes: int, master_seed: int = 0):
    """Episode seeds are ``master_seed + index``: paired across planners and agent counts."""
    return [base.replace(planner=p, agents=m, seed=master_seed + k)
            for p in planners for m in ms for k in range(episodes)]


# worker-local map and cache; built once per process
_WORLD: dict = {}


def _world_for(cfg: ScenarioConfig):
    key = (cfg.map_file, cfg.layout, cfg.map_seed)
    if key not in _WORLD:
        gm = load_world_map(cfg)
        _WORLD.clear()
        _WORLD[key] = (gm, precompute_all(gm))
    return _WORLD[key]


def _run_one(cfg: ScenarioConfig) -> EpisodeRow:
    gm, cache = _world_for(cfg)
    return EpisodeRow.from_result(run_episode(cfg, gm, cache))


def run_configs(configs, workers: int | None = None, progress=None) -> BenchmarkReport:
    workers = worker_count() if workers is None else workers
    rows: list[EpisodeRow] = []
    if workers == 0:
        for cfg in configs:
            rows.append(_run_one(cfg))
            if progress:
                progress(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_one, configs, chunksize=1):
                rows.append(row)
                if progress:
                    progress(row)
    rows.sort(key=lambda r: r.key)
    return BenchmarkReport(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_episodes_csv(report: BenchmarkReport, path, inline_timings: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_COLUMNS)
        for r in report.rows:
            vals = [getattr(r, c) for c in EPISODE_COLUMNS]
            if not inline_timings:
                vals[EPISODE_COLUMNS.index("mean_decision_ms")] = None
            w.writerow([_fmt(v) for v in vals])


def write_aggregate_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_COLUMNS)
        for row in report.aggregate():
            w.writerow([_fmt(row[c]) for c in AGGREGATE_COLUMNS])


def write_timings_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_COLUMNS)
        for r in report.rows:
            w.writerow([_fmt(getattr(r, c)) for c in TIMING_COLUMNS])


def run_benchmark(base: ScenarioConfig, planners, ms, episodes: int, out_dir=None,
                  master_seed: int = 0, workers: int | None = None, inline_timings: bool = False,
                  progress=None) -> BenchmarkReport:
    configs = episode_configs(base, planners, ms, episodes, master_seed)
    report = run_configs(configs, workers, progress)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_episodes_csv(report, out / "episodes.csv", inline_timings)
        write_aggregate_csv(report, out / "aggregate.csv")
        write_timings_csv(report, out / "timings.csv")
    return report


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
