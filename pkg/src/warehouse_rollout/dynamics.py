"""The multiagent control problem: states with their dynamics f, and the stage cost g."""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Sequence

from .gridmap import ACTIONS, Action, GridMap

C = len(ACTIONS)


class AgentStatus(enum.IntEnum):
    ACTIVE = 0
    MALFUNCTIONED = 1
    PARKED = 2


class GoodStatus(enum.IntEnum):
    WAITING = 0
    ASSIGNED = 1
    IN_TRANSIT = 2
    DELIVERED = 3


@dataclass(frozen=True)
class AgentState:
    pos: int
    target: int
    status: AgentStatus = AgentStatus.ACTIVE
    good: int = -1  # index into WorldState.goods, -1 for a plain target
    home: int = -1  # where the agent parks once the pool runs dry; -1 parks in place

    @property
    def moving(self) -> bool:
        """Active, or Parked but still on its way home."""
        if self.status == AgentStatus.ACTIVE:
            return True
        return self.status == AgentStatus.PARKED and self.pos != self.target


@dataclass(frozen=True)
class Good:
    storage_cell: int
    delivery_cell: int
    status: GoodStatus = GoodStatus.WAITING


@dataclass(frozen=True)
class CostParams:
    alpha: float = 0.999
    c1: float = 1e20
    c2: float = -1e4
    swap_conflicts: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.c1 <= 0:
            raise ValueError("collision penalty c1 must be positive")
        if self.c2 >= 0:
            raise ValueError("arrival reward c2 must be negative")


@dataclass(frozen=True)
class WorldState:
    """x_k: per-agent (position, target) pairs plus the goods bookkeeping b_k.

    ``pool`` holds the unassigned goods in the order the assigner will hand
    them out; it is part of b_k so that ``step`` stays a pure function.
    """

    agents: tuple[AgentState, ...]
    goods: tuple[Good, ...] = ()
    pool: tuple[int, ...] = ()
    stage: int = 0

    @property
    def m(self) -> int:
        return len(self.agents)

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(a.pos for a in self.agents)

    @cached_property
    def obstacles(self) -> frozenset[int]:
        """Storage cells currently holding a good."""
        return frozenset(
            g.storage_cell
            for g in self.goods
            if g.status in (GoodStatus.WAITING, GoodStatus.ASSIGNED)
        )

    def delivered(self) -> int:
        return sum(g.status == GoodStatus.DELIVERED for g in self.goods)

    def all_delivered(self) -> bool:
        return bool(self.goods) and all(g.status == GoodStatus.DELIVERED for g in self.goods)


JointControl = tuple  # tuple[Action, ...], one entry per agent

# (goods, pool) -> (good index or None, remaining pool)
TargetAssigner = Callable[[Sequence[Good], tuple], tuple]


def pool_assigner(goods, pool):
    """Hand out the front of the pool; the pool order carries the randomness."""
    if not pool:
        return None, pool
    return pool[0], pool[1:]


class InfeasibleControl(ValueError):
    pass


def feasible_controls(state: WorldState, gridmap: GridMap, i: int) -> tuple[Action, ...]:
    """U^i(x): depends on agent i's own (position, target) and the goods only."""
    if not 0 <= i < state.m:
        raise IndexError(f"agent index {i} out of range for {state.m} agents")
    agent = state.agents[i]
    if agent.status == AgentStatus.MALFUNCTIONED:
        return (Action.STAY,)
    blocked = state.obstacles
    out = []
    for a, n in gridmap.neighbors(agent.pos):
        if n in blocked and n != agent.target:
            continue
        out.append(a)
    out.append(Action.STAY)
    return tuple(out)


def resolve_targets(state: WorldState, assigner: TargetAssigner | None = None):
    """Target/goods update of f, which depends only on pre-move positions.

    Returns (agents, goods, pool) with positions untouched.
    """
    assigner = assigner or pool_assigner
    agents = list(state.agents)
    goods = list(state.goods)
    pool = state.pool
    for i, a in enumerate(agents):
        if a.status != AgentStatus.ACTIVE or a.pos != a.target:
            continue
        gi = a.good
        if gi >= 0 and goods[gi].status == GoodStatus.ASSIGNED:
            goods[gi] = replace(goods[gi], status=GoodStatus.IN_TRANSIT)
            agents[i] = replace(a, target=goods[gi].delivery_cell)
            continue
        if gi >= 0:
            goods[gi] = replace(goods[gi], status=GoodStatus.DELIVERED)
        nxt, pool = assigner(goods, pool)
        if nxt is None:
            home = a.home if a.home >= 0 else a.pos
            agents[i] = replace(a, status=AgentStatus.PARKED, good=-1, target=home)
        else:
            goods[nxt] = replace(goods[nxt], status=GoodStatus.ASSIGNED)
            agents[i] = replace(a, target=goods[nxt].storage_cell, good=nxt)
    return tuple(agents), tuple(goods), pool


def step(
    state: WorldState,
    u: Sequence[Action],
    gridmap: GridMap,
    assigner: TargetAssigner | None = None,
    check: bool = True,
) -> WorldState:
    if len(u) != state.m:
        raise InfeasibleControl(f"control has {len(u)} components for {state.m} agents")
    if check:
        for i, a in enumerate(u):
            if a not in feasible_controls(state, gridmap, i):
                raise InfeasibleControl(f"action {Action(a).name} infeasible for agent {i}")
    agents, goods, pool = resolve_targets(state, assigner)
    moved = []
    for a, act in zip(agents, u):
        dest = gridmap.move(a.pos, act)
        if dest is None:
            raise InfeasibleControl(f"action {Action(act).name} leaves the grid")
        moved.append(a if dest == a.pos else replace(a, pos=dest))
    return WorldState(tuple(moved), goods, pool, state.stage + 1)


def count_collisions(positions: Sequence[int]) -> int:
    """Sum over cells of max(0, occupants - 1)."""
    return len(positions) - len(set(positions))


def count_swaps(prev: Sequence[int], cur: Sequence[int]) -> int:
    moved = {}
    for i, (p, c) in enumerate(zip(prev, cur)):
        if p != c:
            moved.setdefault((p, c), []).append(i)
    n = 0
    for (p, c), who in moved.items():
        if p < c and (c, p) in moved:
            n += len(who) * len(moved[(c, p)])
    return n


def collision_count(
    state: WorldState, previous: WorldState | None = None, swap_conflicts: bool = False
) -> int:
    n = count_collisions(state.positions)
    if swap_conflicts and previous is not None:
        n += count_swaps(previous.positions, state.positions)
    return n


def arrival_reward(state: WorldState, params: CostParams) -> float:
    hits = sum(a.status == AgentStatus.ACTIVE and a.pos == a.target for a in state.agents)
    return params.c2 * hits


def stage_cost(
    state: WorldState,
    u: Sequence[Action],
    gridmap: GridMap,
    params: CostParams,
    assigner: TargetAssigner | None = None,
    next_state: WorldState | None = None,
) -> float:
    if next_state is None:
        next_state = step(state, u, gridmap, assigner)
    n = collision_count(next_state, state, params.swap_conflicts)
    return params.c1 * n + arrival_reward(state, params)


def good_count_summary(state: WorldState) -> Counter:
    return Counter(g.status for g in state.goods)
