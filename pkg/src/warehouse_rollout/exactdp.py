"""Exact dynamic programming on tiny instances with frozen targets.

A state is the agents' positions plus a Done flag per agent. An agent standing
on its target collects c2 once and turns Done; a Done agent stays on its target
for good and still occupies the cell. A transition that puts two agents on one
cell (or swaps two, if swaps count) ends the run in the absorbing terminal,
as does the last agent turning Done. This is the same model the rollout
simulations use, so exact values and simulated estimates can be compared.

Index 0 is always the terminal. Transitions are stored flat: state ``s`` owns
rows ``offsets[s]:offsets[s + 1]`` of ``controls``, ``nxt``, ``cost`` and ``coll``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import CostParams, count_collisions, count_swaps
from .gridmap import ACTIONS, Action, CellKind, GridMap, parse_map
from .pathcache import UNREACHABLE, OnDemandFields
from .policies import Router
from .rollout import multiagent_rollout_once

STATE_GUARD = 200_000
TERMINAL = 0
DEFAULT_TOL = 1e-9


class ProblemTooLarge(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


@dataclass
class EnumeratedProblem:
    gridmap: GridMap
    targets: tuple[int, ...]
    params: CostParams
    states: list  # [None] + [(positions, done)]
    index: dict
    agent_controls: list  # per state: per agent tuple of Actions
    controls: list  # flat joint controls
    offsets: np.ndarray
    nxt: np.ndarray
    cost: np.ndarray
    coll: np.ndarray
    _rows: list = field(default_factory=list, repr=False)  # per state: {u: row}

    @property
    def m(self) -> int:
        return len(self.targets)

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def alpha(self) -> float:
        return self.params.alpha

    def row(self, s: int, u: tuple) -> int:
        return self._rows[s][tuple(u)]

    def describe(self, s: int) -> str:
        if s == TERMINAL:
            return "terminal"
        pos, done = self.states[s]
        parts = []
        for i, (p, d) in enumerate(zip(pos, done)):
            r, c = self.gridmap.decode(p)
            tr, tc = self.gridmap.decode(self.targets[i])
            parts.append(f"agent {i} at ({r},{c}) target ({tr},{tc}){' done' if d else ''}")
        return "; ".join(parts)


def _state_count_bound(cells: int, m: int) -> int:
    return (cells + 1) ** m + 1


def enumerate_problem(gridmap: GridMap, targets: Sequence[int], params: CostParams | None = None,
                      guard: int = STATE_GUARD) -> EnumeratedProblem:
    """Every collision-free placement of the agents with their Done flags.

    Only Done agents sit still by force; an agent on its target that is not
    yet Done has only Stay (it is collecting its reward this stage).
    """
    params = params or CostParams()
    targets = tuple(int(t) for t in targets)
    m = len(targets)
    cells = [c for c in range(gridmap.size) if gridmap.kind(c) != CellKind.WALL]
    if any(gridmap.kind(t) == CellKind.WALL for t in targets):
        raise ValueError("targets must not be walls")
    if _state_count_bound(len(cells), m) > guard:
        raise ProblemTooLarge(f"{len(cells)} cells and {m} agents exceed the {guard}-state guard")

    per_agent = [[(c, False) for c in cells] + [(t, True)] for t in targets]
    states: list = [None]
    index: dict = {}
    for combo in itertools.product(*per_agent):
        pos = tuple(c for c, _ in combo)
        done = tuple(d for _, d in combo)
        if all(done) or len(set(pos)) < m:
            continue
        index[(pos, done)] = len(states)
        states.append((pos, done))

    def moves(i, p, d):
        if d or p == targets[i]:
            return (Action.STAY,)
        out = []
        for a in ACTIONS:
            q = gridmap.move(p, a)
            if q is not None and (q == targets[i] or gridmap.is_transit(q)):
                out.append(a)
        return tuple(out)

    agent_controls = [()]
    controls = [tuple(Action.STAY for _ in range(m))]
    nxt = [TERMINAL]
    cost = [0.0]
    coll = [0]
    offsets = [0, 1]
    rows = [{controls[0]: 0}]
    for s in range(1, len(states)):
        pos, done = states[s]
        ac = tuple(moves(i, pos[i], done[i]) for i in range(m))
        agent_controls.append(ac)
        arriving = [not done[i] and pos[i] == targets[i] for i in range(m)]
        reward = params.c2 * sum(arriving)
        new_done = tuple(d or a for d, a in zip(done, arriving))
        table = {}
        for u in itertools.product(*ac):
            q = tuple(gridmap.move(pos[i], u[i]) for i in range(m))
            n = count_collisions(q)
            if params.swap_conflicts:
                n += count_swaps(pos, q)
            if n or all(new_done):
                t = TERMINAL
            else:
                t = index[(q, new_done)]
            table[u] = len(controls)
            controls.append(u)
            nxt.append(t)
            cost.append(params.c1 * n + reward)
            coll.append(n)
        rows.append(table)
        offsets.append(len(controls))
    return EnumeratedProblem(
        gridmap, targets, params, states, index, agent_controls, controls,
        np.asarray(offsets, dtype=np.int64), np.asarray(nxt, dtype=np.int64),
        np.asarray(cost, dtype=float), np.asarray(coll, dtype=np.int64), rows,
    )


# ---------------------------------------------------------------- operators

def scaled(values: np.ndarray) -> np.ndarray:
    return np.maximum(1.0, np.abs(values))


def apply_policy(problem: EnumeratedProblem, policy: np.ndarray, J: np.ndarray) -> np.ndarray:
    """T_mu J, with ``policy`` holding one transition row per state."""
    return problem.cost[policy] + problem.alpha * J[problem.nxt[policy]]


def apply_bellman(problem: EnumeratedProblem, J: np.ndarray) -> np.ndarray:
    """T J: minimum over every feasible joint control."""
    q = problem.cost + problem.alpha * J[problem.nxt]
    return np.minimum.reduceat(q, problem.offsets[:-1])


def greedy_policy(problem: EnumeratedProblem, J: np.ndarray) -> np.ndarray:
    q = problem.cost + problem.alpha * J[problem.nxt]
    out = np.empty(problem.n, dtype=np.int64)
    for s in range(problem.n):
        a, b = problem.offsets[s], problem.offsets[s + 1]
        out[s] = a + int(np.argmin(q[a:b]))
    return out


def _iterate(step: Callable[[np.ndarray], np.ndarray], n: int, tol: float, max_iter: int,
             history: list | None, J0: np.ndarray | None = None) -> np.ndarray:
    J = np.zeros(n) if J0 is None else J0.astype(float).copy()
    for _ in range(max_iter):
        new = step(J)
        delta = np.abs(new - J)
        if history is not None:
            history.append(float(delta.max()))
        J = new
        if np.all(delta <= tol * scaled(J)):
            return J
    raise NotConverged(f"no convergence within {max_iter} iterations")


def policy_eval_vi(problem: EnumeratedProblem, policy: np.ndarray, tol: float = DEFAULT_TOL,
                   max_iter: int = 1_000_000, history: list | None = None) -> np.ndarray:
    """J_mu by iterating T_mu from zero.

    Stops once every entry moves by at most ``tol * max(1, |J|)``; then checks
    the Bellman residual against ten times that.
    """
    J = _iterate(lambda v: apply_policy(problem, policy, v), problem.n, tol, max_iter, history)
    residual = np.abs(J - apply_policy(problem, policy, J))
    if np.any(residual > 10 * tol * scaled(J)):
        raise NotConverged("Bellman residual above tolerance after convergence")
    return J


def optimal_vi(problem: EnumeratedProblem, tol: float = DEFAULT_TOL, max_iter: int = 1_000_000,
               history: list | None = None) -> np.ndarray:
    return _iterate(lambda v: apply_bellman(problem, v), problem.n, tol, max_iter, history)


def bellman_residual(problem: EnumeratedProblem, policy: np.ndarray, J: np.ndarray) -> np.ndarray:
    return np.abs(J - apply_policy(problem, policy, J))


# ---------------------------------------------------------------- policies

SHORTEST_PATH = "shortest_path"
CAUTIOUS = "cautious"


def base_policy(problem: EnumeratedProblem, kind: str = SHORTEST_PATH) -> np.ndarray:
    """Stationary base policies as transition rows.

    ``shortest_path`` steps along shortest paths, routing around Done agents.
    ``cautious`` does the same but waits while the next cell holds another agent.
    """
    if kind not in (SHORTEST_PATH, CAUTIOUS):
        raise ValueError(f"unknown base policy {kind!r}")
    fields = OnDemandFields(problem.gridmap)
    routers: dict = {}
    out = np.zeros(problem.n, dtype=np.int64)
    for s in range(1, problem.n):
        pos, done = problem.states[s]
        static = frozenset(p for p, d in zip(pos, done) if d)
        router = routers.get(static)
        if router is None:
            router = routers[static] = Router(fields, problem.gridmap, static)
        u = []
        for i, (p, d) in enumerate(zip(pos, done)):
            t = problem.targets[i]
            if d or p == t or fields.dist(t, p) == UNREACHABLE:
                u.append(Action.STAY)
                continue
            a = router.action(t, p)
            if kind == CAUTIOUS and problem.gridmap.move(p, a) in set(pos) - {p}:
                a = Action.STAY
            u.append(a)
        out[s] = problem.row(s, tuple(u))
    return out


class TabulatedStage:
    """The rollout module's view of one enumerated state, with J-bar given as a table."""

    def __init__(self, problem: EnumeratedProblem, s: int, jbar: np.ndarray, base_row: int):
        self.problem = problem
        self.s = s
        self.jbar = jbar
        self.m = problem.m
        self._base = problem.controls[base_row]

    def controls(self, i):
        return self.problem.agent_controls[self.s][i]

    def base_action(self, i):
        return self._base[i]

    def q_value(self, u) -> float:
        r = self.problem.row(self.s, u)
        return float(self.problem.cost[r] + self.problem.alpha * self.jbar[self.problem.nxt[r]])

    def collisions(self, u) -> int:
        return int(self.problem.coll[self.problem.row(self.s, u)])


@dataclass
class RolloutTable:
    policy: np.ndarray  # transition row per state
    jtilde: np.ndarray
    jbar: np.ndarray
    lead: np.ndarray  # index of the base policy supplying provisional actions


def rollout_table(problem: EnumeratedProblem, bases: Sequence[np.ndarray], base_values: Sequence[np.ndarray],
                  orders: Callable[[int], Sequence[int]] | None = None, pick=None) -> RolloutTable:
    """Multiagent rollout at every state with J-bar = min of the base values.

    Provisional actions come from the base policy attaining J-bar at the state
    (the first one on ties). ``pick`` replaces the per-agent argmin, which is
    only for building deliberately broken controls.
    """
    values = np.vstack(base_values)
    jbar = values.min(axis=0)
    lead = values.argmin(axis=0)
    policy = np.zeros(problem.n, dtype=np.int64)
    jt = np.zeros(problem.n)
    for s in range(1, problem.n):
        stage = TabulatedStage(problem, s, jbar, int(bases[lead[s]][s]))
        order = None if orders is None else orders(s)
        if pick is None:
            u, value, _ = multiagent_rollout_once(stage, order)
        else:
            u, value = pick(stage, order)
        policy[s] = problem.row(s, u)
        jt[s] = value
    return RolloutTable(policy, jt, jbar, lead)


def argmax_pick(stage: TabulatedStage, order):
    """Sequential *maximization*: a negative control that must break the bounds."""
    m = stage.m
    order = range(m) if order is None else order
    u = [stage.base_action(i) for i in range(m)]
    value = stage.q_value(tuple(u))
    for i in order:
        best = None
        for a in stage.controls(i):
            u[i] = a
            v = stage.q_value(tuple(u))
            if best is None or v > best[1]:
                best = (a, v)
        u[i], value = best
    return tuple(u), value


def rollout_iterates(problem: EnumeratedProblem, policy: np.ndarray, J0: np.ndarray, count: int):
    """J0, T J0, T^2 J0, ... for the rollout policy's operator T."""
    out = [J0]
    J = J0
    for _ in range(count):
        J = apply_policy(problem, policy, J)
        out.append(J)
    return out


# ---------------------------------------------------------------- bound checks

@dataclass
class BoundReport:
    name: str
    states: int
    violations: dict = field(default_factory=dict)  # check -> count
    worst: dict = field(default_factory=dict)  # check -> largest relative excess
    dumps: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())


def _leq(a: np.ndarray, b: np.ndarray, tol: float):
    """Entries where a <= b fails beyond tol * max(1, |b|), and the relative excess."""
    scale = np.maximum(scaled(a), scaled(b))
    excess = (a - b) / scale
    return np.flatnonzero(excess > tol), float(excess.max(initial=-np.inf))


def verify_bounds(problem: EnumeratedProblem, base_values: Sequence[np.ndarray], table: RolloutTable,
                  tol: float = DEFAULT_TOL, name: str = "", max_dumps: int = 5) -> BoundReport:
    """(a) J_rollout <= J-tilde, (b) J-tilde <= J-bar, (c) J_rollout <= J_mu for every base mu."""
    j_roll = policy_eval_vi(problem, table.policy, tol=min(tol, DEFAULT_TOL) / 10)
    checks = {"a: J_rollout <= J_tilde": (j_roll, table.jtilde),
              "b: J_tilde <= J_bar": (table.jtilde, table.jbar)}
    for k, jb in enumerate(base_values):
        checks[f"c: J_rollout <= J_base{k}"] = (j_roll, jb)
    report = BoundReport(name, problem.n)
    for label, (lhs, rhs) in checks.items():
        bad, worst = _leq(lhs, rhs, tol)
        report.violations[label] = len(bad)
        report.worst[label] = worst
        for s in bad[:max_dumps]:
            report.dumps.append(f"{label}: state {s} [{problem.describe(int(s))}] lhs={lhs[s]!r} rhs={rhs[s]!r}")
    return report


# ---------------------------------------------------------------- battery

@dataclass(frozen=True)
class Instance:
    name: str
    map_text: str
    targets: tuple[int, ...]

    @property
    def gridmap(self) -> GridMap:
        return parse_map(self.map_text)


# (rows, cols, agents)
BATTERY_SHAPES = (
    (1, 4, 1), (1, 4, 2), (1, 4, 3),
    (2, 3, 1), (2, 3, 2), (2, 3, 3),
    (2, 4, 1), (2, 4, 2), (2, 4, 3),
    (3, 4, 1), (3, 4, 2), (3, 4, 3),
)


def _connected(gm: GridMap) -> bool:
    cells = [c for c in range(gm.size) if gm.kind(c) != CellKind.WALL]
    seen = {cells[0]}
    todo = [cells[0]]
    while todo:
        c = todo.pop()
        for _, n in gm.neighbors(c):
            if n not in seen:
                seen.add(n)
                todo.append(n)
    return len(seen) == len(cells)


def make_instance(rows: int, cols: int, m: int, rng: np.random.Generator, name: str = "",
                  walls: int = 0) -> Instance:
    for _ in range(100):
        grid = [["."] * cols for _ in range(rows)]
        free = [(r, c) for r in range(rows) for c in range(cols)]
        for k in rng.choice(len(free), size=walls, replace=False) if walls else ():
            r, c = free[int(k)]
            grid[r][c] = "#"
        text = "\n".join("".join(row) for row in grid) + "\n"
        gm = parse_map(text)
        open_cells = [c for c in range(gm.size) if gm.kind(c) != CellKind.WALL]
        if len(open_cells) <= m or not _connected(gm):
            continue
        targets = tuple(int(open_cells[int(k)]) for k in rng.choice(len(open_cells), size=m, replace=False))
        return Instance(name or f"{rows}x{cols}-m{m}", text, targets)
    raise ValueError("could not draw a connected instance")


def default_battery(seed: int = 0, repeats: int = 2) -> list[Instance]:
    """``repeats`` seeded draws of every shape; 3x4 maps get one pillar on the second draw."""
    out = []
    for rep in range(repeats):
        for rows, cols, m in BATTERY_SHAPES:
            rng = np.random.default_rng([seed, rows, cols, m, rep])
            walls = 1 if rows * cols >= 12 and rep % 2 else 0
            out.append(make_instance(rows, cols, m, rng, f"{rows}x{cols}-m{m}-{rep}", walls))
    return out


@dataclass
class InstanceResult:
    instance: Instance
    report: BoundReport
    states: int
    contraction_ok: bool
    monotone_ok: bool
    max_residual: float


def contraction_holds(history: Sequence[float], alpha: float, slack: float) -> bool:
    """Successive sup-norm changes shrink by at least alpha (up to ``slack``)."""
    return all(b <= alpha * a + slack for a, b in zip(history, history[1:]))


def check_instance(inst: Instance, params: CostParams | None = None, tol: float = DEFAULT_TOL,
                   order_seed: int | None = 0) -> InstanceResult:
    params = params or CostParams()
    problem = enumerate_problem(inst.gridmap, inst.targets, params)
    bases = [base_policy(problem, SHORTEST_PATH), base_policy(problem, CAUTIOUS)]
    values = [policy_eval_vi(problem, b, tol=tol / 10) for b in bases]
    orders = None
    if order_seed is not None:
        rng = np.random.default_rng([order_seed, problem.n])
        perms = [tuple(int(i) for i in rng.permutation(problem.m)) for _ in range(problem.n)]
        orders = perms.__getitem__
    table = rollout_table(problem, bases, values, orders)
    report = verify_bounds(problem, values, table, tol, inst.name)

    history: list = []
    J_star = optimal_vi(problem, tol=tol / 10, history=history)
    slack = 1e-12 * float(scaled(J_star).max())
    contraction_ok = contraction_holds(history, params.alpha, slack)

    # the proof's sequence: start at J-bar and apply the rollout operator; it must not increase
    iterates = rollout_iterates(problem, table.policy, table.jbar, 200)
    monotone_ok = all(np.all(b <= a + tol * scaled(a)) for a, b in zip(iterates, iterates[1:]))
    residual = max(float((bellman_residual(problem, b, v) / scaled(v)).max()) for b, v in zip(bases, values))
    return InstanceResult(inst, report, problem.n, contraction_ok, monotone_ok, residual)


def run_battery(instances: Sequence[Instance] | None = None, params: CostParams | None = None,
                tol: float = DEFAULT_TOL) -> list[InstanceResult]:
    return [check_instance(inst, params, tol) for inst in (instances or default_battery())]


def format_battery(results: Sequence[InstanceResult]) -> str:
    head = f"{'instance':<16} {'states':>6} {'(a)':>5} {'(b)':>5} {'(c)':>5} {'contr':>6} {'mono':>5}  result"
    lines = [head]
    for r in results:
        v = r.report.violations
        a = v.get("a: J_rollout <= J_tilde", 0)
        b = v.get("b: J_tilde <= J_bar", 0)
        c = sum(n for k, n in v.items() if k.startswith("c:"))
        ok = r.report.ok and r.contraction_ok and r.monotone_ok
        lines.append(f"{r.instance.name:<16} {r.states:>6} {a:>5} {b:>5} {c:>5} "
                     f"{'ok' if r.contraction_ok else 'FAIL':>6} {'ok' if r.monotone_ok else 'FAIL':>5}  "
                     f"{'PASS' if ok else 'FAIL'}")
    return "\n".join(lines)
