"""Standard rollout, one-agent-at-a-time rollout, and rollout with random reshuffling.

The algorithms only see a ``StageProblem``: the per-agent control sets at the
current state, the base policy's action for each agent, and the Q-factor
``g(x, u) + alpha * J(f(x, u))`` of a joint control. ``WarehouseStage`` is the
warehouse instance; the exact-DP module supplies tabulated instances.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .dynamics import (
    C,
    AgentStatus,
    CostParams,
    WorldState,
    arrival_reward,
    count_collisions,
    count_swaps,
    feasible_controls,
    resolve_targets,
    step,
)
from .gridmap import Action, GridMap
from .policies import (
    MU1,
    NO_LEGS,
    BasePolicy,
    Legs,
    PolicyKind,
    TrajectorySimulator,
    agent_legs,
    shortest_path_action,
    static_cells,
)

log = logging.getLogger(__name__)

MAX_STANDARD_AGENTS = 6
DEFAULT_MAX_RESHUFFLES = 32


class StageProblem(Protocol):
    m: int

    def controls(self, i: int) -> Sequence[Action]: ...

    def base_action(self, i: int) -> Action: ...

    def q_value(self, u: tuple) -> float: ...

    def collisions(self, u: tuple) -> int: ...


class RolloutError(ValueError):
    pass


def identity_order(m: int) -> tuple[int, ...]:
    return tuple(range(m))


def check_order(order: Sequence[int], m: int) -> tuple[int, ...]:
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(m)):
        raise RolloutError(f"{order} is not a permutation of 0..{m - 1}")
    return order


def inverse_order(order: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(order)
    for pos, agent in enumerate(order):
        inv[agent] = pos
    return tuple(inv)


def fisher_yates(n: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform random permutation of range(n), drawn with the classic backward swap loop."""
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return tuple(perm)


def _argmin(candidates, values, preferred):
    best = min(values)
    for a, v in zip(candidates, values):
        if a == preferred and v == best:
            return a, v
    for a, v in zip(candidates, values):
        if v == best:
            return a, v
    raise AssertionError("unreachable")


def multiagent_rollout_once(problem: StageProblem, order: Sequence[int] | None = None):
    """Sequential minimization over agents in ``order``.

    Agents not yet optimized play their base action. Exact ties keep the base
    action if it is among the minimizers, otherwise the first action in the
    fixed Up, Down, Left, Right, Stay order. Returns (control, value, evaluations).
    """
    m = problem.m
    order = identity_order(m) if order is None else check_order(order, m)
    u = [problem.base_action(i) for i in range(m)]
    if m == 0:
        return (), problem.q_value(()), 0
    evaluations = 0
    value = None
    for agent in order:
        cands = list(problem.controls(agent))
        vals = []
        for a in cands:
            u[agent] = a
            vals.append(problem.q_value(tuple(u)))
        evaluations += len(cands)
        a, value = _argmin(cands, vals, problem.base_action(agent))
        u[agent] = a
    return tuple(u), value, evaluations


def safe_rollout_once(problem: StageProblem, order: Sequence[int] | None = None):
    """Sequential minimization that keeps every partial control collision-free.

    Agents not yet optimized stand still, and each agent only picks among
    controls that cause no collision with the decided and standing agents.
    From a collision-free state Stay always qualifies, so the result passes
    the good rule. Returns (control, value, evaluations), or None if some
    agent has no collision-free control.
    """
    m = problem.m
    order = identity_order(m) if order is None else check_order(order, m)
    u = [Action.STAY] * m
    if m == 0:
        return (), problem.q_value(()), 0
    evaluations = 0
    value = None
    for agent in order:
        cands, vals = [], []
        for a in problem.controls(agent):
            u[agent] = a
            if problem.collisions(tuple(u)):
                continue
            cands.append(a)
            vals.append(problem.q_value(tuple(u)))
        evaluations += len(cands)
        if not cands:
            return None
        a, value = _argmin(cands, vals, problem.base_action(agent))
        u[agent] = a
    return tuple(u), value, evaluations


def standard_rollout(problem: StageProblem, max_agents: int = MAX_STANDARD_AGENTS):
    """Exact minimization over the full product of control sets (C^m candidates)."""
    m = problem.m
    if m > max_agents:
        raise RolloutError(f"standard rollout refuses m={m} > {max_agents}")
    base = tuple(problem.base_action(i) for i in range(m))
    best_u, best_v = None, None
    count = 0
    for u in itertools.product(*(problem.controls(i) for i in range(m))):
        v = problem.q_value(u)
        count += 1
        if best_v is None or v < best_v:
            best_u, best_v = u, v
    if problem.q_value(base) == best_v:
        best_u = base
    return tuple(best_u), best_v, count


def good_rule(problem: StageProblem, u: tuple) -> bool:
    """True iff applying ``u`` causes no collision at the next state."""
    return problem.collisions(u) == 0


def jtilde(problem: StageProblem, u: tuple) -> float:
    return problem.q_value(tuple(u))


@dataclass
class RolloutDecision:
    control: tuple
    value: float
    order_used: tuple[int, ...]
    reshuffles: int
    accepted_by_rule: bool
    evaluations: int
    collisions: int = 0
    attempts: list = field(default_factory=list, repr=False)
    safe_pass: bool = False


def reshuffling_rollout(
    problem: StageProblem,
    sigma: Sequence[int] | None,
    rng: np.random.Generator,
    max_reshuffles: int = DEFAULT_MAX_RESHUFFLES,
):
    """Multiagent rollout that redraws the agent order until the control is good.

    Returns (decision, next_sigma). When ``max_reshuffles`` new orders all fail,
    one more pass in the first order uses ``safe_rollout_once``; it counts as a
    further reshuffle and is not an accepted rollout control. Only if that pass
    is impossible does the attempt with fewest collisions (then lowest value,
    then earliest) get used.
    """
    if max_reshuffles < 0:
        raise RolloutError("max_reshuffles must be >= 0")
    m = problem.m
    tau = identity_order(m) if sigma is None else check_order(sigma, m)
    first = tau
    attempts = []
    evaluations = 0
    for j in range(max_reshuffles + 1):
        if j > 0:
            tau = fisher_yates(m, rng)
        u, value, ev = multiagent_rollout_once(problem, tau)
        evaluations += ev
        n = problem.collisions(u)
        attempts.append((n, value, j, u, tau))
        if n == 0:
            return RolloutDecision(u, value, tau, j, True, evaluations, 0, attempts), tau
    safe = safe_rollout_once(problem, first)
    if safe is not None:
        u, value, ev = safe
        log.info("reshuffle budget %d exhausted; using the collision-free pass", max_reshuffles)
        return RolloutDecision(u, value, first, max_reshuffles + 1, False, evaluations + ev, 0, attempts,
                               safe_pass=True), first
    n, value, j, u, tau = min(attempts, key=lambda t: (t[0], t[1], t[2]))
    log.warning("reshuffle budget %d exhausted; using attempt %d with %d collisions", max_reshuffles, j, n)
    return RolloutDecision(u, value, tau, max_reshuffles, False, evaluations, n, attempts), tau


class WarehouseStage:
    """Q-factors at one warehouse state, with J-bar estimated by base-policy simulation.

    Target resolution in f depends only on pre-move positions, so the successor's
    targets are shared by every candidate and only positions differ.
    """

    def __init__(
        self,
        state: WorldState,
        gridmap: GridMap,
        fields,
        params: CostParams,
        simulator: TrajectorySimulator | None = None,
        assigner=None,
        follow_on: bool = True,
        policies=None,
        lead: BasePolicy = MU1,
    ):
        self.state = state
        self.gridmap = gridmap
        self.fields = fields
        self.params = params
        self.assigner = assigner
        self.sim = simulator or TrajectorySimulator(fields, params, gridmap=gridmap)
        self.policies = tuple(policies or self.sim.policies)
        self.lead = lead
        self.m = state.m
        resolved, goods, pool = resolve_targets(state, assigner)
        self.targets = [a.target for a in resolved]
        # Active agents' itineraries do not depend on u; a Parked agent has one
        # (back home) only if the candidate leaves it off its home cell
        self._legs = [
            agent_legs(a, goods, not pool, follow_on) if a.status == AgentStatus.ACTIVE else None
            for a in resolved
        ]
        self._homing = [Legs(((a.target, False),), True) for a in resolved]
        self._parked = [a.status == AgentStatus.PARKED for a in resolved]
        self.positions = [a.pos for a in state.agents]
        self.reward_now = arrival_reward(state, params)
        self._controls = [feasible_controls(state, gridmap, i) for i in range(self.m)]
        self._dest = [
            {a: gridmap.move(self.positions[i], a) for a in self._controls[i]} for i in range(self.m)
        ]
        # mu1 acts on the targets the agents hold once f has resolved arrivals,
        # which is also how the simulations continue past a reached target.
        # Provisional actions are the lead policy's first move (mu1 unless the
        # previous stage's J-bar came from a Frozen policy still in progress)
        router = self.sim.router(static_cells(resolved))
        self._base = [
            Action.STAY if lead.freeze_steps(i) > 0 else shortest_path_action(fields, a, router)
            for i, a in enumerate(resolved)
        ]
        self._memo: dict[tuple, float] = {}
        self._attained: dict[tuple, BasePolicy] = {}
        self.q_calls = 0
        self.simulations = 0

    def controls(self, i):
        return self._controls[i]

    def base_action(self, i):
        return self._base[i]

    def base_control(self) -> tuple:
        return tuple(self._base)

    def next_positions(self, u) -> list[int]:
        return [self._dest[i][a] for i, a in enumerate(u)]

    def collisions(self, u) -> int:
        nxt = self.next_positions(u)
        n = count_collisions(nxt)
        if self.params.swap_conflicts:
            n += count_swaps(self.positions, nxt)
        return n

    def stage_cost(self, u) -> float:
        return self.params.c1 * self.collisions(u) + self.reward_now

    def legs(self, nxt) -> list:
        out = []
        for i, q in enumerate(nxt):
            lg = self._legs[i]
            if lg is None:
                lg = self._homing[i] if self._parked[i] and q != self.targets[i] else NO_LEGS
            out.append(lg)
        return out

    def cost_to_go(self, u) -> float:
        self.simulations += len(self.policies)
        nxt = self.next_positions(u)
        value, pol = self.sim.best(nxt, self.legs(nxt), policies=self.policies)
        self._attained[tuple(u)] = pol
        return value

    def attaining(self, u) -> BasePolicy:
        """The base policy whose estimate gave J-bar at f(x, u)."""
        u = tuple(u)
        if u not in self._attained:
            self.cost_to_go(u)
        return self._attained[u]

    def q_value(self, u) -> float:
        u = tuple(u)
        self.q_calls += 1
        v = self._memo.get(u)
        if v is None:
            v = self.stage_cost(u) + self.params.alpha * self.cost_to_go(u)
            self._memo[u] = v
        return v

    def next_state(self, u) -> WorldState:
        return step(self.state, u, self.gridmap, self.assigner)


def next_lead(problem: WarehouseStage, u) -> tuple[BasePolicy, tuple]:
    """Carry a Frozen estimate across stages.

    If J-bar at f(x, u) came from mu1, the next stage starts afresh (mu1
    provisional actions, Frozen successors from clock 0). If it came from a
    Frozen policy entered at clock c, that policy is what the previous estimate
    assumed at f(x, u): the next stage takes its first move as the provisional
    actions and simulates Frozen successors from clock c + 1, so the
    one-stage-later estimate never exceeds the current one.
    """
    pol = problem.attaining(u)
    if pol.kind == PolicyKind.SHORTEST_PATH:
        return MU1, tuple(p.at(0) for p in problem.policies)
    return pol, tuple(p.advanced() for p in problem.policies)


def budget_ok(decision: RolloutDecision, m: int) -> bool:
    return decision.evaluations <= C * m * (decision.reshuffles + 1)
