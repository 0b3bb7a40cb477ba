import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from warehouse_rollout.dynamics import (
    AgentState,
    AgentStatus,
    WorldState,
    count_collisions,
    feasible_controls,
    resolve_targets,
    step,
)
from warehouse_rollout.coop_astar import (
    CoopAStarPlanner,
    ReservationTable,
    default_horizon,
    plan_agent,
    replan_all,
)
from warehouse_rollout.gridmap import Action, parse_map
from warehouse_rollout.harness.episode import initial_state
from warehouse_rollout.pathcache import OnDemandFields, precompute_all

CORRIDOR = parse_map(".....")
OPEN = parse_map("....\n....\n....")


def occupancy(path, t):
    return path[min(t, len(path) - 1)]


def oracle_arrival(gm, start, target, prior, horizon):
    """Earliest t at which ``target`` can be reached and then held, by layered BFS."""

    def free(c, t):
        return all(occupancy(p, t) != c for p in prior)

    def swap_free(a, b, t):
        return not any(occupancy(p, t) == b and occupancy(p, t + 1) == a for p in prior)

    if not free(start, 0):
        return None
    layer = {start}
    for t in range(horizon + 1):
        if target in layer and all(free(target, s) for s in range(t, horizon + len(prior) + 2)):
            return t
        nxt = set()
        for c in layer:
            for n in [c] + [n for _, n in gm.neighbors(c)]:
                if free(n, t + 1) and (n == c or swap_free(c, n, t)):
                    nxt.add(n)
        layer = nxt
    return None


@given(st.data())
def test_plans_match_spacetime_bfs(data):
    gm = data.draw(st.sampled_from([CORRIDOR, OPEN]))
    n = gm.height * gm.width
    k = data.draw(st.integers(1, 3 if gm is OPEN else 2))
    cells = data.draw(st.lists(st.integers(0, n - 1), min_size=2 * k, max_size=2 * k))
    starts, targets = cells[:k], cells[k:]
    if len(set(starts)) < k or len(set(targets)) < k:
        return
    fields = OnDemandFields(gm)
    horizon = 12
    table = ReservationTable(horizon)
    prior = []
    for s, g in zip(starts, targets):
        want = oracle_arrival(gm, s, g, prior, horizon)
        path = plan_agent(gm, fields, s, g, table)
        if want is None:
            assert path is None
            break
        assert path is not None and len(path) - 1 == want
        assert path[0] == s and path[-1] == g
        prior.append(path)


def test_corridor_oncoming_agent_cannot_pass():
    fields = OnDemandFields(CORRIDOR)
    table = ReservationTable(12)
    assert plan_agent(CORRIDOR, fields, 0, 4, table) == [0, 1, 2, 3, 4]
    assert plan_agent(CORRIDOR, fields, 3, 0, table) is None


def test_single_agent_path_is_shortest():
    fields = OnDemandFields(OPEN)
    for s in range(12):
        for g in range(12):
            path = plan_agent(OPEN, fields, s, g, ReservationTable(20))
            assert len(path) - 1 == fields.dist(s, g)


def test_unreachable_target_fails():
    gm = parse_map("..#..")
    assert plan_agent(gm, OnDemandFields(gm), 0, 4, ReservationTable(20)) is None


def test_higher_priority_is_unaffected_by_lower():
    fields = OnDemandFields(OPEN)
    t1 = ReservationTable(20)
    first = plan_agent(OPEN, fields, 0, 11, t1)
    later = plan_agent(OPEN, fields, 11, 0, t1)
    assert len(first) - 1 == fields.dist(0, 11)
    assert later is not None and len(later) - 1 >= fields.dist(11, 0)


WAREHOUSE = parse_map("D..D..D..D\n..........\n..@@@@@@..\n..........\n..@@@@@@..\n..........")
FIELDS = precompute_all(WAREHOUSE)


def reachable(seed, m, steps):
    rng = np.random.default_rng(seed)
    w = initial_state(WAREHOUSE, m, 6, rng)
    for _ in range(steps):
        u = tuple(Action(int(rng.choice(feasible_controls(w, WAREHOUSE, i)))) for i in range(m))
        nxt = step(w, u, WAREHOUSE)
        if count_collisions(nxt.positions) == 0:
            w = nxt
    return w


@given(st.integers(0, 5000), st.integers(1, 8), st.integers(0, 40))
def test_replanned_paths_never_share_cell_time(seed, m, steps):
    w = reachable(seed, m, steps)
    fields = FIELDS.with_targets(WAREHOUSE, [a.home for a in w.agents])
    horizon = default_horizon(fields, m)
    plan = replan_all(w, WAREHOUSE, fields, horizon)
    resolved, _, _ = resolve_targets(w)
    tracks = [plan.paths.get(i, [a.pos]) for i, a in enumerate(resolved)]
    for t in range(horizon + 1):
        cells = [occupancy(p, t) for p in tracks]
        assert len(set(cells)) == len(cells)
    for i, p in plan.paths.items():
        if plan.complete[i]:
            assert p[-1] == resolved[i].target


def test_planner_waits_for_malfunctioned_and_replans_on_assignment():
    gm = OPEN
    fields = OnDemandFields(gm)
    agents = (AgentState(0, 3), AgentState(5, 5, AgentStatus.MALFUNCTIONED))
    planner = CoopAStarPlanner(gm, fields, 2)
    u, _ = planner.decide(WorldState(agents))
    assert u[1] == Action.STAY and u[0] == Action.RIGHT
    assert planner.replans == 1
    u, _ = planner.decide(WorldState((AgentState(1, 3), agents[1]), stage=1))
    assert planner.replans == 1 and u[0] == Action.RIGHT
    planner.decide(WorldState((AgentState(2, 8), agents[1]), stage=2))
    assert planner.replans == 2
