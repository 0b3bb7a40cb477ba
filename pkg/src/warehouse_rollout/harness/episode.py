"""Episode orchestration: initial states, planners, malfunctions, metrics."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..coop_astar import CoopAStarPlanner
from ..dynamics import (
    AgentState,
    AgentStatus,
    CostParams,
    Good,
    GoodStatus,
    WorldState,
    collision_count,
    resolve_targets,
    stage_cost,
    step,
)
from ..gridmap import CellKind, GridMap, load_map
from ..pathcache import OnDemandFields, PathCache, precompute_all
from ..policies import MU1, PARK, BasePolicy, PolicyKind, TrajectorySimulator
from ..rollout import WarehouseStage, fisher_yates, next_lead, reshuffling_rollout, standard_rollout
from .mapgen import generate_map
from .scenario import ScenarioConfig

# stream tags for SeedSequence([seed, tag, ...]); keeps the streams independent
_INIT, _MALFUNCTION, _STAGE = 1, 2, 3


def stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def initial_state(gridmap: GridMap, m: int, n_goods: int, rng: np.random.Generator,
                  park_at_home: bool = True) -> WorldState:
    """Agents start on distinct random floor cells and goods on distinct storage
    cells, each with a uniform delivery cell. The pool order is uniform and first
    tasks are handed out; agents left without a good start Parked. With ``park_at_home`` the start cell
    is also where an agent returns once no goods remain."""
    floor = gridmap.cells_of(CellKind.FLOOR)
    storage = gridmap.storage_cells
    delivery = gridmap.delivery_cells
    if m > len(floor):
        raise ValueError(f"{m} agents do not fit on {len(floor)} floor cells")
    if n_goods > len(storage):
        raise ValueError(f"{n_goods} goods do not fit on {len(storage)} storage cells")
    if not delivery:
        raise ValueError("map has no delivery cells")
    starts = rng.choice(len(floor), size=m, replace=False)
    shelves = rng.choice(len(storage), size=n_goods, replace=False)
    drops = rng.integers(0, len(delivery), size=n_goods)
    goods = tuple(Good(storage[int(s)], delivery[int(d)]) for s, d in zip(shelves, drops))
    pool = fisher_yates(n_goods, rng)
    # every agent "arrives" at its own cell with no good: the assigner hands out tasks
    agents = tuple(
        AgentState(floor[int(s)], floor[int(s)], home=floor[int(s)] if park_at_home else -1) for s in starts
    )
    resolved, goods, pool = resolve_targets(WorldState(agents, goods, pool))
    return WorldState(resolved, goods, pool, 0)


@dataclass
class Decision:
    control: tuple
    jtilde: float | None = None
    reshuffles: int = 0
    evaluations: int = 0
    accepted: bool = True


def home_cells(world: WorldState) -> frozenset[int]:
    return frozenset(a.home for a in world.agents if a.home >= 0)


class RolloutPlanner:
    """Multiagent rollout with reshuffling, J-bar = min(mu1, mu2)."""

    def __init__(self, gridmap, fields, params: CostParams, seed: int, max_reshuffles=32,
                 freeze_period=8, precompute=True, arrival=PARK, follow_on=True, reserve_homes=True):
        self.follow_on = follow_on
        self.reserve_homes = reserve_homes
        self.gridmap = gridmap
        self.params = params
        self.seed = seed
        self.max_reshuffles = max_reshuffles
        self.precompute = precompute
        self.fields = fields if precompute else OnDemandFields(gridmap)
        mu2 = BasePolicy(PolicyKind.FROZEN, freeze_period)
        self.sim = TrajectorySimulator(self.fields, params, (MU1, mu2), arrival, gridmap)
        self.sigma = None
        self.lead, self.policies = MU1, self.sim.policies
        self.name = "MA-Rollout" if precompute else "MA-Rollout-NoPrecompute"

    def decide(self, world: WorldState) -> Decision:
        if not self.precompute:
            # without the cache, distance fields are rebuilt at every stage
            self.fields.reset()
            self.sim.reset()
        if self.reserve_homes:
            self.sim.reserved = home_cells(world)
        problem = WarehouseStage(world, self.gridmap, self.fields, self.params, self.sim,
                                 follow_on=self.follow_on, policies=self.policies, lead=self.lead)
        rng = stream(self.seed, _STAGE, world.stage)
        dec, self.sigma = reshuffling_rollout(problem, self.sigma, rng, self.max_reshuffles)
        self.lead, self.policies = next_lead(problem, dec.control)
        return Decision(dec.control, dec.value, dec.reshuffles, dec.evaluations, dec.accepted_by_rule)

    def interrupt(self):
        """The world changed outside the dynamics (a malfunction): start afresh."""
        self.lead, self.policies = MU1, tuple(p.at(0) for p in self.sim.policies)


class StandardRolloutPlanner:
    name = "StandardRollout"

    def __init__(self, gridmap, fields, params: CostParams, freeze_period=8, arrival=PARK, follow_on=True,
                 reserve_homes=True):
        self.follow_on = follow_on
        self.reserve_homes = reserve_homes
        self.gridmap = gridmap
        self.fields = fields
        self.params = params
        mu2 = BasePolicy(PolicyKind.FROZEN, freeze_period)
        self.sim = TrajectorySimulator(fields, params, (MU1, mu2), arrival, gridmap)
        self.interrupt()

    def interrupt(self):
        self.lead, self.policies = MU1, self.sim.policies

    def decide(self, world: WorldState) -> Decision:
        if self.reserve_homes:
            self.sim.reserved = home_cells(world)
        problem = WarehouseStage(world, self.gridmap, self.fields, self.params, self.sim,
                                 follow_on=self.follow_on, policies=self.policies, lead=self.lead)
        u, value, count = standard_rollout(problem)
        self.lead, self.policies = next_lead(problem, u)
        return Decision(u, value, 0, count, problem.collisions(u) == 0)


class CoopAStarAdapter:
    name = "CoopAStar"

    def __init__(self, gridmap, fields, m):
        self.inner = CoopAStarPlanner(gridmap, fields, m)

    def decide(self, world: WorldState) -> Decision:
        u, _ = self.inner.decide(world)
        return Decision(u, None, 0, 0, True)

    def interrupt(self):
        pass


def make_planner(cfg: ScenarioConfig, gridmap: GridMap, cache: PathCache):
    if cfg.planner in ("MA-Rollout", "MA-Rollout-NoPrecompute"):
        return RolloutPlanner(gridmap, cache, cfg.cost, cfg.seed, cfg.max_reshuffles, cfg.freeze_period,
                              precompute=cfg.planner == "MA-Rollout", arrival=cfg.sim_arrival,
                              follow_on=cfg.sim_follow_on, reserve_homes=cfg.reserve_homes)
    if cfg.planner == "StandardRollout":
        return StandardRolloutPlanner(gridmap, cache, cfg.cost, cfg.freeze_period, cfg.sim_arrival,
                                      cfg.sim_follow_on, cfg.reserve_homes)
    if cfg.planner == "CoopAStar":
        return CoopAStarAdapter(gridmap, cache, cfg.agents)
    raise ValueError(cfg.planner)


def expected_length(world: WorldState, fields) -> int:
    """Rough episode length: legs per agent times the mean storage-to-delivery trip."""
    trips = [fields.dist(g.delivery_cell, g.storage_cell) for g in world.goods]
    mean_trip = sum(trips) / len(trips)
    return int(math.ceil(len(world.goods) / world.m) * 2 * mean_trip) + 1


def inject_malfunction(world: WorldState, gridmap: GridMap, count: int, rng: np.random.Generator,
                       fields=None):
    """Freeze ``count`` distinct active agents standing on plain floor. Their goods go
    back to the storage shelf and to the front of the pool. A working agent whose home
    is now blocked by a frozen robot takes over the nearest home the frozen ones left."""
    eligible = [i for i, a in enumerate(world.agents)
                if a.status == AgentStatus.ACTIVE and gridmap.kind(a.pos) == CellKind.FLOOR]
    count = min(count, len(eligible))
    if count == 0:
        return world, ()
    chosen = sorted(int(i) for i in rng.choice(eligible, size=count, replace=False))
    agents = list(world.agents)
    goods = list(world.goods)
    returned = []
    for i in chosen:
        a = agents[i]
        if a.good >= 0 and goods[a.good].status in (GoodStatus.ASSIGNED, GoodStatus.IN_TRANSIT):
            goods[a.good] = replace(goods[a.good], status=GoodStatus.WAITING)
            returned.append(a.good)
        agents[i] = AgentState(a.pos, a.pos, AgentStatus.MALFUNCTIONED, -1)
    _rehome(agents, chosen, [world.agents[i].home for i in chosen], fields)
    pool = tuple(returned) + world.pool
    return WorldState(tuple(agents), tuple(goods), pool, world.stage), tuple(chosen)


def _rehome(agents: list, chosen, vacated, fields) -> None:
    frozen = {agents[i].pos for i in chosen}
    free = sorted(h for h in vacated if h >= 0 and h not in frozen)
    for i, a in enumerate(agents):
        if i in chosen or a.home < 0 or a.home not in frozen:
            continue
        if not free:
            home = -1
        else:
            home = min(free, key=lambda h: (fields.dist(h, a.home) if fields is not None else 0, h))
            free.remove(home)
        target = home if a.status == AgentStatus.PARKED else a.target
        if home < 0 and a.status == AgentStatus.PARKED:
            target = a.pos
        agents[i] = replace(a, home=home, target=target)


@dataclass
class EpisodeResult:
    planner: str
    m: int
    seed: int
    success: bool = False
    collided: bool = False
    timed_out: bool = False
    stages: int = 0
    cost: float = 0.0
    deliveries: int = 0
    stage_costs: list = field(default_factory=list, repr=False)
    jtilde: list = field(default_factory=list, repr=False)
    reshuffles: list = field(default_factory=list, repr=False)
    evaluations: list = field(default_factory=list, repr=False)
    accepted: list = field(default_factory=list, repr=False)
    decision_s: list = field(default_factory=list, repr=False)
    malfunctioned: tuple = ()
    malfunction_stage: int | None = None
    frozen_moved: bool = False
    alpha: float = 0.999

    @property
    def mean_decision_ms(self) -> float:
        return 1000.0 * sum(self.decision_s) / len(self.decision_s) if self.decision_s else 0.0

    @property
    def mean_reshuffles(self) -> float:
        return sum(self.reshuffles) / len(self.reshuffles) if self.reshuffles else 0.0

    def reshuffle_histogram(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for r in self.reshuffles:
            out[r] = out.get(r, 0) + 1
        return dict(sorted(out.items()))

    @property
    def fallback_stages(self) -> int:
        """Stages whose control did not come from an accepted rollout attempt."""
        return sum(1 for ok in self.accepted if not ok)

    def tail_costs(self) -> list[float]:
        """Realized discounted cost from each stage to the end of the episode."""
        tails = [0.0] * (len(self.stage_costs) + 1)
        for k in range(len(self.stage_costs) - 1, -1, -1):
            tails[k] = self.stage_costs[k] + self.alpha * tails[k + 1]
        return tails[:-1]

    def bound_violations(self, rtol: float = 1e-6) -> list[tuple[int, float, float]]:
        out = []
        for k, (tail, jt, ok) in enumerate(zip(self.tail_costs(), self.jtilde, self.accepted)):
            if jt is None or not ok:
                continue
            if tail > jt + rtol * max(1.0, abs(jt)):
                out.append((k, tail, jt))
        return out

    def budget_violations(self, C: int = 5) -> list[int]:
        return [k for k, (e, r) in enumerate(zip(self.evaluations, self.reshuffles))
                if self.planner.startswith("MA-") and e > C * self.m * (r + 1)]


def load_world_map(cfg: ScenarioConfig) -> GridMap:
    if cfg.map_file:
        return load_map(cfg.map_file)
    return generate_map(cfg.layout, cfg.map_seed)


def run_episode(cfg: ScenarioConfig, gridmap: GridMap | None = None, cache: PathCache | None = None) -> EpisodeResult:
    gridmap = gridmap or load_world_map(cfg)
    cache = cache or precompute_all(gridmap)
    p = cfg.cost
    world = initial_state(gridmap, cfg.agents, cfg.goods, stream(cfg.seed, _INIT), cfg.park_at_home)
    homes = [a.home for a in world.agents if a.home >= 0]
    cache = cache.with_targets(gridmap, homes)
    planner = make_planner(cfg, gridmap, cache)
    res = EpisodeResult(cfg.planner, cfg.agents, cfg.seed, alpha=p.alpha)

    onset = None
    mrng = stream(cfg.seed, _MALFUNCTION)
    if cfg.malfunctioning > 0:
        window = cfg.malfunction_window or max(1, expected_length(world, cache) // 2)
        onset = int(mrng.integers(0, window))
    frozen_at: dict[int, int] = {}

    disc = 1.0
    while not world.all_delivered():
        if world.stage >= cfg.max_stages:
            res.timed_out = True
            break
        if onset is not None and world.stage == onset:
            world, chosen = inject_malfunction(world, gridmap, cfg.malfunctioning, mrng, cache)
            res.malfunctioned, res.malfunction_stage = chosen, world.stage
            planner.interrupt()
            frozen_at = {i: world.agents[i].pos for i in chosen}
        t0 = time.perf_counter()
        dec = planner.decide(world)
        res.decision_s.append(time.perf_counter() - t0)
        nxt = step(world, dec.control, gridmap)
        g = stage_cost(world, dec.control, gridmap, p, next_state=nxt)
        res.stage_costs.append(g)
        res.cost += disc * g
        disc *= p.alpha
        res.jtilde.append(dec.jtilde)
        res.reshuffles.append(dec.reshuffles)
        res.evaluations.append(dec.evaluations)
        res.accepted.append(dec.accepted)
        if any(nxt.agents[i].pos != c for i, c in frozen_at.items()):
            res.frozen_moved = True
        n = collision_count(nxt, world, p.swap_conflicts)
        world = nxt
        if n:
            res.collided = True
            break
    res.stages = world.stage
    res.deliveries = world.delivered()
    res.success = world.all_delivered() and not res.collided
    return res

