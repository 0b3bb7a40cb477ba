"""Base policies and simulation-based estimates of their cost functions.

mu1 follows the shortest path to the current target. Agents that are standing
still for good at decision time (Malfunctioned, or Parked at their home cell)
are part of the static environment: when the precomputed path runs through one
of them, mu1 uses a field that routes around them instead. Cells in an optional
``reserved`` set (the agents' parking homes) are treated the same way, so a
route never crosses a cell where some agent will later park. mu2 is mu1 with
agent ``i`` held still for the first ``i mod D`` simulated stages.

Simulations never consult the assigner. Each agent runs through the legs that
the dynamics already fix: its current target, then the good's delivery cell
after a pickup, then its home cell once the pool is empty (``follow_on``). After
its last known leg an agent either sits there (``park``) or leaves the map
(``vanish``); an agent known to park stays put in both modes. Legs toward home
earn nothing.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import AgentStatus, CostParams, GoodStatus, WorldState, count_collisions, count_swaps
from .gridmap import Action, GridMap
from .pathcache import NO_ACTION, UNREACHABLE, build_distance_field

DEFAULT_FREEZE_PERIOD = 8
HORIZON_SLACK = 16
PARK, VANISH = "park", "vanish"
ARRIVAL_MODES = (PARK, VANISH)


class PolicyKind(enum.Enum):
    SHORTEST_PATH = "shortest_path"
    FROZEN = "frozen"


_DISCOUNTS: dict[float, list[float]] = {}


def discounts(alpha: float, n: int) -> list[float]:
    """[1, alpha, alpha**2, ...] built by repeated multiplication (shared by all simulators)."""
    table = _DISCOUNTS.setdefault(alpha, [1.0])
    while len(table) < n:
        table.append(table[-1] * alpha)
    return table


@dataclass(frozen=True)
class BasePolicy:
    """``clock`` is the simulated stage at which the policy is entered: a Frozen
    policy entered at clock c holds agent i still for max(0, i mod D - c) stages."""

    kind: PolicyKind = PolicyKind.SHORTEST_PATH
    freeze_period: int = DEFAULT_FREEZE_PERIOD
    clock: int = 0

    def __post_init__(self):
        if self.kind == PolicyKind.FROZEN and self.freeze_period < 1:
            raise ValueError("freeze period must be >= 1")
        if self.clock < 0:
            raise ValueError("clock must be >= 0")

    def freeze_steps(self, i: int) -> int:
        if self.kind == PolicyKind.SHORTEST_PATH:
            return 0
        return max(0, i % self.freeze_period - self.clock)

    def at(self, clock: int) -> "BasePolicy":
        if self.kind == PolicyKind.SHORTEST_PATH or clock == self.clock:
            return self
        return replace(self, clock=clock)

    def advanced(self, n: int = 1) -> "BasePolicy":
        """The same policy entered ``n`` stages later."""
        return self.at(self.clock + n)


MU1 = BasePolicy(PolicyKind.SHORTEST_PATH)
MU2 = BasePolicy(PolicyKind.FROZEN, DEFAULT_FREEZE_PERIOD)


@dataclass(frozen=True)
class CostEstimate:
    value: float
    truncated: bool
    horizon_used: int


def static_cells(agents) -> frozenset[int]:
    return frozenset(a.pos for a in agents if not a.moving)


@dataclass(frozen=True)
class Legs:
    """An agent's simulated itinerary: (target, paid) stops, then ``settles`` says
    whether it stays at the last stop (True) or follows the arrival mode."""

    stops: tuple[tuple[int, bool], ...] = ()
    settles: bool = False

    def __bool__(self):
        return bool(self.stops)


NO_LEGS = Legs()


def agent_legs(agent, goods=(), pool_empty: bool = False, follow_on: bool = True) -> Legs:
    if not agent.moving:
        return NO_LEGS
    if agent.status != AgentStatus.ACTIVE:
        return Legs(((agent.target, False),), True)
    stops = [(agent.target, True)]
    if not follow_on or agent.good < 0:
        return Legs(tuple(stops), False)
    g = goods[agent.good]
    if g.status == GoodStatus.ASSIGNED and agent.target == g.storage_cell:
        stops.append((g.delivery_cell, True))
    if not pool_empty:
        return Legs(tuple(stops), False)
    if agent.home >= 0:
        stops.append((agent.home, False))
    return Legs(tuple(stops), True)


def state_legs(state: WorldState, follow_on: bool = True) -> list[Legs]:
    empty = not state.pool
    return [agent_legs(a, state.goods, empty, follow_on) for a in state.agents]


class Router:
    """mu1's routing for one fixed set of static cells.

    From ``p`` toward ``t`` the precomputed field is used if its path avoids the
    static cells; otherwise a field with those cells walled off (built once and
    memoized); if even that cannot reach ``p``, the precomputed field again.
    Following the precomputed path keeps it clear, so trajectories never loop.
    """

    def __init__(self, fields, gridmap: GridMap | None = None, static=frozenset()):
        if static and gridmap is None:
            raise ValueError("a map is needed to route around static cells")
        self.fields = fields
        self.gridmap = gridmap
        self.static = frozenset(static)
        self._mask = None
        if self.static:
            self._mask = np.zeros(gridmap.size, dtype=bool)
            self._mask[list(self.static)] = True
        self._detour: dict[int, object] = {}
        self._traj: dict[tuple[int, int], np.ndarray | None] = {}
        self._cores: dict[tuple, tuple] = {}

    def _clear(self, t: int, p: int) -> bool:
        path = self.fields.path(t, p)
        return path is None or not self._mask[path[1:]].any()

    def _field_at(self, t: int, p: int):
        base = self.fields.field(t)
        if self._mask is None or self._clear(t, p):
            return base
        f = self._detour.get(t)
        if f is None:
            f = build_distance_field(self.gridmap, t, require_floor=False, blocked=self.static - {t})
            self._detour[t] = f
        return f if f.dist[p] != UNREACHABLE else base

    def action(self, t: int, p: int) -> Action:
        if p == t:
            return Action.STAY
        a = self._field_at(t, p).next_action[p]
        return Action.STAY if a == NO_ACTION else Action(int(a))

    def trajectory(self, t: int, p: int) -> np.ndarray | None:
        """Cells from ``p`` to ``t`` under mu1, None if ``t`` is unreachable."""
        key = (t, p)
        if key in self._traj:
            return self._traj[key]
        if self._mask is None or self._clear(t, p):
            out = self.fields.path(t, p)
        else:
            cells = [p]
            c = p
            limit = 4 * len(self._mask)
            while c != t:
                f = self._field_at(t, c)
                c = int(f.next_cell[c])
                if c < 0 or len(cells) > limit:
                    raise RuntimeError(f"mu1 trajectory toward {t} from {p} does not terminate")
                cells.append(c)
            out = np.asarray(cells, dtype=np.int32)
        self._traj[key] = out
        return out

    def dist(self, t: int, p: int) -> int:
        traj = self.trajectory(t, p)
        return UNREACHABLE if traj is None else len(traj) - 1

    def itinerary(self, legs: Legs, p: int, delay: int):
        """(cells, arrival stage per stop) for an agent starting at ``p`` that holds
        still for ``delay`` stages first. Stops after an unreachable one never
        happen (arrival inf) and the agent stays where it got stuck."""
        key = (legs, p, delay)
        hit = self._cores.get(key)
        if hit is not None:
            return hit
        parts = []
        arrivals = []
        here, run = p, 0
        for t, _ in legs.stops:
            path = self.trajectory(t, here)
            if path is None:
                arrivals += [math.inf] * (len(legs.stops) - len(arrivals))
                break
            parts.append(path[1:] if parts else path)
            run += len(path) - 1
            arrivals.append(run + delay if run else 0)
            here = t
        cells = np.concatenate(parts) if parts else np.asarray([p], dtype=np.int32)
        if len(cells) == 0:
            cells = np.asarray([p], dtype=np.int32)
        if delay and len(cells) > 1:
            cells = np.concatenate([np.full(delay, p, dtype=np.int32), cells])
        hit = (cells, tuple(arrivals))
        self._cores[key] = hit
        return hit


def shortest_path_action(fields, agent, router: Router | None = None) -> Action:
    if not agent.moving or agent.pos == agent.target:
        return Action.STAY
    if agent.target not in fields:
        raise KeyError(f"no distance field for live target {agent.target}")
    if router is not None:
        return router.action(agent.target, agent.pos)
    a = fields.field(agent.target).next_action[agent.pos]
    return Action.STAY if a == NO_ACTION else Action(int(a))


def base_control(policy: BasePolicy, state: WorldState, fields, sim_clock: int = 0,
                 gridmap: GridMap | None = None) -> tuple:
    router = Router(fields, gridmap, static_cells(state.agents)) if gridmap is not None else None
    out = []
    for i, agent in enumerate(state.agents):
        if sim_clock < policy.freeze_steps(i):
            out.append(Action.STAY)
        else:
            out.append(shortest_path_action(fields, agent, router))
    return tuple(out)


def default_horizon(state: WorldState, fields, gridmap: GridMap | None = None, follow_on: bool = True) -> int:
    """Longest known itinerary + m + slack."""
    router = Router(fields, gridmap, static_cells(state.agents) if gridmap is not None else ())
    return _horizon(router, [a.pos for a in state.agents], state_legs(state, follow_on))


def evaluate_cost(
    policy: BasePolicy,
    state: WorldState,
    gridmap: GridMap,
    fields,
    params: CostParams,
    horizon: int | None = None,
    arrival: str = PARK,
    follow_on: bool = True,
    reserved=frozenset(),
) -> CostEstimate:
    """Closed-loop simulation of ``policy`` from ``state``, one stage at a time.

    Stops after the first stage whose successor holds a collision, or once every
    agent has finished its last known leg.
    """
    if arrival not in ARRIVAL_MODES:
        raise ValueError(f"arrival mode must be one of {ARRIVAL_MODES}")
    router = Router(fields, gridmap, static_cells(state.agents) | frozenset(reserved))
    legs = state_legs(state, follow_on)
    if horizon is None:
        horizon = _horizon(router, [a.pos for a in state.agents], legs)
    H = horizon
    if H < 1:
        raise ValueError("horizon must be >= 1")
    pos = [a.pos for a in state.agents]
    stop = [0] * len(pos)
    live = [bool(lg) for lg in legs]
    gone: set[int] = set()
    total = 0.0
    k = 0
    while k < H and any(live):
        reward = 0.0
        arrived = []
        nxt = list(pos)
        for i in range(len(pos)):
            if not live[i]:
                continue
            stops = legs[i].stops
            t, paid = stops[stop[i]]
            if pos[i] == t:
                if paid:
                    reward += params.c2
                stop[i] += 1
                if stop[i] == len(stops):
                    arrived.append(i)
                    continue
                t = stops[stop[i]][0]
            if k < policy.freeze_steps(i):
                continue
            nxt[i] = gridmap.move(pos[i], router.action(t, pos[i]))
        if arrival == VANISH:
            gone.update(i for i in arrived if not legs[i].settles)
            nxt = [-1 - i if i in gone else c for i, c in enumerate(nxt)]
        n = count_collisions(nxt)
        if params.swap_conflicts:
            n += count_swaps(pos, nxt)
        # a predicted collision ends the simulation and is charged as one event, so
        # an immediate collision (at least c1) never beats a later one (at most alpha * c1)
        total += discounts(params.alpha, k + 1)[k] * ((params.c1 if n else 0.0) + reward)
        for i in arrived:
            live[i] = False
        pos = nxt
        k += 1
        if n > 0:
            return CostEstimate(total, False, k)
    return CostEstimate(total, k >= H and any(live), k)


def _horizon(router: Router, starts, legs) -> int:
    far = 0
    for s, lg in zip(starts, legs):
        here, run = s, 0
        for t, _ in lg.stops:
            d = router.dist(t, here)
            if d == UNREACHABLE:
                break
            run += d
            here = t
        far = max(far, run)
    return far + len(starts) + HORIZON_SLACK


def combined_cost(
    state: WorldState,
    gridmap: GridMap,
    fields,
    params: CostParams,
    horizon: int | None = None,
    policies=(MU1, MU2),
    arrival: str = PARK,
    follow_on: bool = True,
    reserved=frozenset(),
) -> float:
    """J-bar: pointwise minimum over the base policies' cost estimates."""
    return min(
        evaluate_cost(p, state, gridmap, fields, params, horizon, arrival, follow_on, reserved).value
        for p in policies
    )


class TrajectorySimulator:
    """Array form of ``evaluate_cost`` for many candidate successor states.

    Without reassignment every agent's simulated trajectory is its own delayed
    mu1 path, so trajectories are cached per (static cells, target, start, delay)
    and a whole simulation reduces to a first-duplicate search over a (K+1, m) matrix.
    """

    MAX_ROUTERS = 64

    def __init__(self, fields, params: CostParams, policies=(MU1, MU2), arrival: str = PARK,
                 gridmap: GridMap | None = None):
        if arrival not in ARRIVAL_MODES:
            raise ValueError(f"arrival mode must be one of {ARRIVAL_MODES}")
        self.fields = fields
        self.params = params
        self.policies = tuple(policies)
        self.arrival = arrival
        self.gridmap = gridmap
        # cells mu1 never passes through (parking homes); added to every static set
        self.reserved: frozenset[int] = frozenset()
        self._routers: dict[frozenset, Router] = {}

    def reset(self):
        self._routers.clear()

    def router(self, static=frozenset()) -> Router:
        static = frozenset(static) | self.reserved
        r = self._routers.get(static)
        if r is None:
            if len(self._routers) >= self.MAX_ROUTERS:
                self._routers.clear()
            r = Router(self.fields, self.gridmap, static)
            self._routers[static] = r
        return r

    def simulate(self, starts, legs, policy: BasePolicy, horizon: int | None = None,
                 static=None) -> CostEstimate:
        """``legs[j]`` is agent j's itinerary (falsy for agents that stay put).
        ``static`` defaults to the cells of agents without legs."""
        m = len(starts)
        if static is None:
            static = frozenset(s for s, lg in zip(starts, legs) if not lg)
        router = self.router(static)
        H = _horizon(router, starts, legs) if horizon is None else horizon
        P = None
        paid_arr = []
        last = []
        plans = []
        for j in range(m):
            if not legs[j]:
                plans.append(None)
                continue
            cells, arr = router.itinerary(legs[j], starts[j], policy.freeze_steps(j))
            plans.append((cells, arr))
            paid_arr += [a for a, (_, pd) in zip(arr, legs[j].stops) if pd]
            last.append(arr[-1])
        if not last:
            return CostEstimate(0.0, False, 0)
        a_max = max(last)
        K = H if a_max == math.inf else min(H, int(a_max) + 1)
        P = np.empty((K + 1, m), dtype=np.int32)
        for j in range(m):
            plan = plans[j]
            if plan is None or len(plan[0]) == 1:
                P[:, j] = starts[j]
            else:
                core = plan[0]
                L = len(core)
                if L >= K + 1:
                    P[:, j] = core[:K + 1]
                else:
                    P[:L, j] = core
                    P[L:, j] = core[-1]
            if self.arrival == VANISH and plan is not None and not legs[j].settles:
                # gone from the row after its last arrival
                a = plan[1][-1]
                if a != math.inf and a + 1 <= K:
                    P[int(a) + 1:, j] = -1 - j
        tau, n = self._first_collision(P)
        limit = tau - 1 if tau else H - 1
        total = self._stagewise_total(paid_arr, limit, tau, n)
        if tau:
            return CostEstimate(total, False, tau)
        truncated = a_max >= H
        return CostEstimate(total, truncated, H if truncated else K)

    def _stagewise_total(self, arrivals, limit, tau, n) -> float:
        # same summation order as evaluate_cost: sum_k disc_k * (c1 [k == collision] + r_k)
        p = self.params
        counts: dict[int, int] = {}
        for a in arrivals:
            if a <= limit:
                counts[int(a)] = counts.get(int(a), 0) + 1
        stages = set(counts)
        if tau:
            stages.add(tau - 1)
        disc = discounts(p.alpha, max(stages, default=0) + 1)
        total = 0.0
        for k in sorted(stages):
            r = 0.0
            for _ in range(counts.get(k, 0)):
                r += p.c2
            coll = p.c1 if (tau and k == tau - 1) else 0.0
            total += disc[k] * (coll + r)
        return total

    def _first_collision(self, P: np.ndarray) -> tuple[int, int]:
        rows = P[1:]
        if rows.shape[0] == 0 or rows.shape[1] < 2:
            return 0, 0
        s = np.sort(rows, axis=1)
        dup = s[:, 1:] == s[:, :-1]
        hit = dup.any(axis=1)
        if self.params.swap_conflicts:
            sw = self._swap_rows(P)
            hit = hit | (sw > 0)
        if not hit.any():
            return 0, 0
        r = int(np.argmax(hit))
        n = int(dup[r].sum())
        if self.params.swap_conflicts:
            n += int(sw[r])
        return r + 1, n

    @staticmethod
    def _swap_rows(P: np.ndarray) -> np.ndarray:
        out = np.zeros(P.shape[0] - 1, dtype=np.int64)
        for k in range(1, P.shape[0]):
            out[k - 1] = count_swaps(P[k - 1].tolist(), P[k].tolist())
        return out

    def best(self, starts, legs, horizon: int | None = None, static=None, policies=None):
        """(J-bar, the policy attaining it); ties go to the earlier policy."""
        best_v, best_p = math.inf, None
        for pol in policies or self.policies:
            v = self.simulate(starts, legs, pol, horizon, static).value
            if best_p is None or v < best_v:
                best_v, best_p = v, pol
        return best_v, best_p

    def combined(self, starts, legs, horizon: int | None = None, static=None, policies=None) -> float:
        return self.best(starts, legs, horizon, static, policies)[0]
