"""Cooperative A*: fixed-priority space-time A* over a shared reservation table."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .dynamics import AgentStatus, WorldState, resolve_targets
from .gridmap import Action, GridMap
from .pathcache import UNREACHABLE
from .policies import shortest_path_action


class ReservationTable:
    """Vertex reservations (cell, t), edge reservations ((from, to), t) for the move
    t -> t+1, and parked cells reserved from some time through the horizon."""

    def __init__(self, horizon: int):
        self.horizon = horizon
        self.occupied: set[tuple[int, int]] = set()
        self.edges: set[tuple[tuple[int, int], int]] = set()
        self.parked_from: dict[int, int] = {}

    def clear(self):
        self.occupied.clear()
        self.edges.clear()
        self.parked_from.clear()

    def cell_free(self, cell: int, t: int) -> bool:
        if (cell, t) in self.occupied:
            return False
        p = self.parked_from.get(cell)
        return p is None or t < p

    def move_free(self, a: int, b: int, t: int) -> bool:
        # no head-on swap with a reserved traversal b -> a over the same step
        return ((b, a), t) not in self.edges

    def last_use(self, cell: int) -> int:
        """Latest reserved time on ``cell`` (horizon if parked), -1 if never used."""
        if cell in self.parked_from:
            return self.horizon
        return max((t for c, t in self.occupied if c == cell), default=-1)

    def reserve_path(self, path: list[int]):
        for t, c in enumerate(path):
            if t > self.horizon:
                break
            self.occupied.add((c, t))
            if t > 0:
                self.edges.add(((path[t - 1], c), t - 1))
        end = len(path) - 1
        if end <= self.horizon:
            prev = self.parked_from.get(path[-1])
            self.parked_from[path[-1]] = end if prev is None else min(prev, end)

    def reserve_static(self, cell: int):
        self.parked_from[cell] = 0


@dataclass
class SpaceTimePlan:
    paths: dict[int, list[int]] = field(default_factory=dict)  # agent -> cell per timestep
    complete: dict[int, bool] = field(default_factory=dict)
    start_stage: int = 0
    targets: dict[int, int] = field(default_factory=dict)


def _search(gridmap: GridMap, fields, start: int, t0: int, target: int, table: ReservationTable,
            final: bool):
    """Space-time A* from ``start`` at time ``t0``; returns the cells from t0 on, or None.

    A final goal is accepted only once no later reservation touches it, since
    the agent parks there; an intermediate goal only has to be free on arrival.
    """
    dist = fields.field(target).dist
    T = table.horizon
    if dist[start] == UNREACHABLE or t0 + dist[start] > T:
        return None
    goal_after = table.last_use(target) if final else -1
    if goal_after >= T:
        return None
    open_heap = [(t0 + int(dist[start]), t0, start)]
    parent: dict[tuple[int, int], tuple[int, int] | None] = {(start, t0): None}
    closed = set()
    while open_heap:
        _, t, c = heapq.heappop(open_heap)
        if (c, t) in closed:
            continue
        closed.add((c, t))
        if c == target and t > goal_after:
            path = []
            node = (c, t)
            while node is not None:
                path.append(node[0])
                node = parent[node]
            return path[::-1]
        if t >= T:
            continue
        nt = t + 1
        succ = [n for _, n in gridmap.neighbors(c) if n == target or gridmap.is_transit(n)]
        succ.append(c)
        for n in succ:
            if dist[n] == UNREACHABLE or nt + dist[n] > T or (n, nt) in closed:
                continue
            if not table.cell_free(n, nt):
                continue
            if n != c and not table.move_free(c, n, t):
                continue
            if (n, nt) not in parent:
                parent[(n, nt)] = (c, t)
                heapq.heappush(open_heap, (nt + int(dist[n]), nt, n))
    return None


def plan_agent(gridmap: GridMap, fields, start: int, target: int, table: ReservationTable):
    """Space-time A* from ``start`` at t=0 to ``target``; None if the open set runs out.

    g is elapsed steps, h the static shortest distance. On success the path and
    its post-arrival parking are reserved.
    """
    if not table.cell_free(start, 0):
        return None
    path = _search(gridmap, fields, start, 0, target, table, final=True)
    if path is not None:
        table.reserve_path(path)
    return path


def default_horizon(fields, m: int) -> int:
    return 2 * fields.diameter() + m


def replan_all(world: WorldState, gridmap: GridMap, fields, horizon: int, order=None) -> SpaceTimePlan:
    """Plan every moving agent in priority order; agents standing still are static obstacles.

    Uses the targets the agents will hold after the next transition, so a leg
    that just finished is planned for its successor target immediately. An agent
    whose search fails waits in place. Its cell must then be reserved against
    every other path, so it joins the static obstacles and the remaining agents
    are planned again; returned paths therefore never share a (cell, time) pair.
    """
    resolved, _, _ = resolve_targets(world)
    order = list(range(world.m) if order is None else order)
    waiting: set[int] = set()
    while True:
        table = ReservationTable(horizon)
        plan = SpaceTimePlan(start_stage=world.stage)
        for i, a in enumerate(resolved):
            if not a.moving or i in waiting:
                table.reserve_static(a.pos)
        failed = None
        for i in order:
            a = resolved[i]
            if not a.moving:
                continue
            plan.targets[i] = a.target
            if i in waiting:
                plan.paths[i] = [a.pos] * (horizon + 1)
                plan.complete[i] = False
                continue
            path = plan_agent(gridmap, fields, a.pos, a.target, table)
            if path is None:
                failed = i
                break
            plan.paths[i] = path
            plan.complete[i] = True
        if failed is None:
            return plan
        waiting.add(failed)


class CoopAStarPlanner:
    """Executes cooperative A* plans open loop and replans on every assignment,
    that is whenever some agent is handed a new target or changes status. An agent whose path has ended holds its cell; once
    the plan's horizon has passed, agents follow mu1 greedily."""

    name = "CoopAStar"

    def __init__(self, gridmap: GridMap, fields, m: int, horizon: int | None = None):
        self.gridmap = gridmap
        self.fields = fields
        self.horizon = default_horizon(fields, m) if horizon is None else horizon
        self.plan: SpaceTimePlan | None = None
        self._signature = None
        self.replans = 0

    def _needs_replan(self, resolved) -> bool:
        sig = tuple((a.target, a.status) for a in resolved)
        need = sig != self._signature
        self._signature = sig
        return need

    def decide(self, world: WorldState, rng=None):
        resolved, _, _ = resolve_targets(world)
        if self._needs_replan(resolved):
            self.plan = replan_all(world, self.gridmap, self.fields, self.horizon)
            self.replans += 1
        offset = world.stage - self.plan.start_stage
        u = []
        for i, a in enumerate(world.agents):
            path = self.plan.paths.get(i)
            if a.status == AgentStatus.MALFUNCTIONED:
                u.append(Action.STAY)
            elif offset >= self.horizon:
                u.append(shortest_path_action(self.fields, resolved[i]))
            elif path is not None and offset + 1 < len(path):
                u.append(_action_between(self.gridmap, path[offset], path[offset + 1], a.pos))
            else:
                u.append(Action.STAY)
        return tuple(u), {}


def _action_between(gridmap: GridMap, a: int, b: int, actual: int) -> Action:
    if a != actual:
        raise RuntimeError("agent drifted from its cooperative A* plan")
    if a == b:
        return Action.STAY
    for act, n in gridmap.neighbors(a):
        if n == b:
            return act
    raise RuntimeError("plan contains a non-adjacent step")
