"""Command line entry point: ``wro <subcommand>``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .exactdp import default_battery, format_battery, run_battery
from .gridmap import load_map, render_map
from .harness.bench import (
    EpisodeRow,
    BenchmarkReport,
    run_benchmark,
    worker_count,
    write_episodes_csv,
)
from .harness.episode import load_world_map, run_episode
from .harness.mapgen import LayoutParams, generate_map
from .harness.scenario import PLANNERS, ConfigError, ScenarioConfig, load_config, parse_config
from .pathcache import precompute_all, read_cache, write_cache


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _layout_params(text: str | None) -> LayoutParams:
    if not text:
        return LayoutParams()
    lines = text.split(",")
    layout_keys = {f for f in LayoutParams.__dataclass_fields__}
    for line in lines:
        key = line.split("=", 1)[0].strip()
        if key not in layout_keys:
            raise ConfigError(f"not a layout key: {key!r}")
    return parse_config("\n".join(lines)).layout


def _base_config(path: str | None) -> ScenarioConfig:
    return load_config(path) if path else ScenarioConfig()


def cmd_precompute(args) -> int:
    gm = load_map(args.map)
    cache = precompute_all(gm)
    size = write_cache(cache, args.out)
    # round trip guards against a silently corrupt write
    read_cache(args.out, gm)
    print(f"{len(cache.fields)} targets, {size} bytes -> {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _base_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    gm = load_world_map(cfg)
    cache = read_cache(args.cache, gm) if args.cache else precompute_all(gm)
    res = run_episode(cfg, gm, cache)
    print(f"{cfg.planner} m={cfg.agents} seed={cfg.seed}: "
          f"{'success' if res.success else 'collision' if res.collided else 'timeout'} "
          f"stages={res.stages} cost={res.cost:.1f} delivered={res.deliveries}/{cfg.goods} "
          f"decision={res.mean_decision_ms:.2f}ms reshuffles={res.mean_reshuffles:.3f}")
    bad = res.bound_violations()
    if bad:
        print(f"bound audit: {len(bad)} stage(s) with realized tail cost above J-tilde")
    if args.csv:
        write_episodes_csv(BenchmarkReport([EpisodeRow.from_result(res)]), args.csv, inline_timings=True)
    return 0


def cmd_bench(args) -> int:
    base = _base_config(args.config)
    if args.goods is not None:
        base = base.replace(goods=args.goods)
    planners = [p.strip() for p in args.planners.split(",") if p.strip()]
    for p in planners:
        if p not in PLANNERS:
            raise ConfigError(f"unknown planner {p!r}")
    total = len(planners) * len(args.grid) * args.episodes
    done = [0]

    def progress(row):
        done[0] += 1
        if not args.quiet:
            print(f"[{done[0]}/{total}] {row.planner} m={row.m} seed={row.seed} "
                  f"{'ok' if row.success else 'FAIL'}", file=sys.stderr, flush=True)

    report = run_benchmark(base, planners, args.grid, args.episodes, args.out, args.seed,
                           worker_count(), args.inline_timings, progress)
    for row in report.aggregate():
        p, m = row["planner"], row["m"]
        cost = row["mean_cost"]
        cost = f"{cost:.1f}" if cost != "" else "-"
        print(f"{p:<24} m={m:<3} success {row['successes']}/{row['episodes']} "
              f"cost({row['cost_population']}) {cost} reshuffles {row['mean_reshuffles']:.3f} "
              f"decision {report.mean_decision_ms(p, m):.2f}ms")
    print(f"wrote {Path(args.out) / 'episodes.csv'}, aggregate.csv, timings.csv")
    return 0


def cmd_verify_bounds(args) -> int:
    if args.battery != "default":
        raise ConfigError("only the 'default' battery is defined")
    results = run_battery(default_battery(seed=args.seed))
    print(format_battery(results))
    failed = [r for r in results if not (r.report.ok and r.contraction_ok and r.monotone_ok)]
    print(f"{len(results) - len(failed)}/{len(results)} instances pass")
    return 1 if failed else 0


def cmd_gen_map(args) -> int:
    params = _layout_params(args.params)
    gm = generate_map(params, args.seed)
    text = render_map(gm).rstrip("\n") + "\n"
    Path(args.out).write_text(text, encoding="utf-8")
    print(f"{gm.height}x{gm.width} map, {len(gm.storage_cells)} storage, "
          f"{len(gm.delivery_cells)} delivery -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wro", description="Warehouse multiagent rollout planner")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="build and save the distance-field cache of a map")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("run", help="run a single episode")
    p.add_argument("--config", help="flat key = value scenario file")
    p.add_argument("--seed", type=int)
    p.add_argument("--cache", help="cache written by 'precompute'")
    p.add_argument("--csv", help="write the episode row here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run a planner x agent-count grid")
    p.add_argument("--grid", type=_int_list, default=[8, 12, 16, 20], help="agent counts, e.g. 8,12,16,20")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--planners", default="MA-Rollout,CoopAStar")
    p.add_argument("--config", help="base scenario file")
    p.add_argument("--goods", type=int)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True)
    p.add_argument("--inline-timings", action="store_true",
                   help="also put wall-times in episodes.csv (breaks byte-identical reruns)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify-bounds", help="exact cost bound check on tiny enumerated instances")
    p.add_argument("--battery", default="default")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("gen-map", help="write a generated warehouse layout")
    p.add_argument("--params", help="comma separated layout keys, e.g. shelf_rows=2,corridor_width=1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_map)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
