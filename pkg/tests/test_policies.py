import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from warehouse_rollout.dynamics import (
    AgentState,
    AgentStatus,
    CostParams,
    WorldState,
    count_collisions,
    feasible_controls,
    step,
)
from warehouse_rollout.gridmap import Action, parse_map
from warehouse_rollout.harness.episode import initial_state
from warehouse_rollout.pathcache import OnDemandFields, precompute_all
from warehouse_rollout.policies import (
    MU1,
    MU2,
    PARK,
    VANISH,
    BasePolicy,
    PolicyKind,
    Router,
    TrajectorySimulator,
    base_control,
    combined_cost,
    evaluate_cost,
    state_legs,
    static_cells,
)

P = CostParams()
OPEN = parse_map("...\n...\n...")
WAREHOUSE = parse_map("D..D..D..D\n..........\n..@@@@@@..\n..........\n..@@@@@@..\n..........")
WAREHOUSE_FIELDS = precompute_all(WAREHOUSE)


def reachable_state(seed: int, m: int, steps: int) -> WorldState:
    """A collision-free state reached by a random walk from a fresh episode start."""
    rng = np.random.default_rng(seed)
    w = initial_state(WAREHOUSE, m, 6, rng)
    for _ in range(steps):
        u = tuple(Action(int(rng.choice(feasible_controls(w, WAREHOUSE, i)))) for i in range(m))
        nxt = step(w, u, WAREHOUSE)
        if count_collisions(nxt.positions) == 0:
            w = nxt
    return w


def fields_for(state):
    return WAREHOUSE_FIELDS.with_targets(WAREHOUSE, [a.home for a in state.agents if a.home >= 0])


def test_base_control_examples():
    t = OPEN.encode(0, 1)
    w = WorldState((AgentState(OPEN.encode(1, 1), t),))
    assert base_control(MU1, w, OnDemandFields(OPEN)) == (Action.UP,)
    frozen = BasePolicy(PolicyKind.FROZEN, 4)
    agents = tuple(AgentState(OPEN.encode(2, c), t) for c in range(3)) + (AgentState(OPEN.encode(1, 0), t),)
    w4 = WorldState(agents)
    assert base_control(frozen, w4, OnDemandFields(OPEN), sim_clock=2)[3] == Action.STAY
    assert frozen.freeze_steps(3) == 3 and frozen.at(2).freeze_steps(3) == 1
    parked = WorldState((AgentState(4, 4, AgentStatus.PARKED),))
    assert base_control(MU1, parked, OnDemandFields(OPEN)) == (Action.STAY,)


def test_frozen_needs_positive_period():
    with pytest.raises(ValueError):
        BasePolicy(PolicyKind.FROZEN, 0)


def test_single_agent_geometric_value():
    gm = parse_map(".......")
    for d in range(0, 6):
        w = WorldState((AgentState(0, d),))
        est = evaluate_cost(MU1, w, gm, OnDemandFields(gm), P)
        expected = P.c2
        for _ in range(d):
            expected *= P.alpha  # the step-by-step discount of the arrival stage
        assert est.value == pytest.approx(expected, rel=1e-12, abs=0)
        assert not est.truncated


def test_crossing_paths_charge_collision():
    gm = OPEN
    w = WorldState((AgentState(gm.encode(1, 0), gm.encode(1, 2)), AgentState(gm.encode(0, 1), gm.encode(2, 1))))
    # oracle: walk both shortest paths and find the first shared cell
    a = [gm.encode(1, 0), gm.encode(1, 1), gm.encode(1, 2)]
    b = [gm.encode(0, 1), gm.encode(1, 1), gm.encode(2, 1)]
    tau = next(k for k in range(1, 3) if a[k] == b[k])
    est = evaluate_cost(MU1, w, gm, OnDemandFields(gm), P)
    assert est.value >= P.alpha ** tau * P.c1 * (1 - 1e-12)
    # the staggered variant lets agent 0 pass first
    mu2 = evaluate_cost(MU2, w, gm, OnDemandFields(gm), P)
    assert mu2.value == pytest.approx(P.alpha ** 2 * P.c2 + P.alpha ** 3 * P.c2, rel=1e-12)
    assert combined_cost(w, gm, OnDemandFields(gm), P) == mu2.value


def test_period_one_means_no_freezing():
    w = reachable_state(3, 4, 10)
    f = fields_for(w)
    one = BasePolicy(PolicyKind.FROZEN, 1)
    v1 = evaluate_cost(MU1, w, WAREHOUSE, f, P).value
    assert evaluate_cost(one, w, WAREHOUSE, f, P).value == v1
    assert combined_cost(w, WAREHOUSE, f, P, policies=(MU1, one)) == v1


def test_trivial_states_cost_nothing():
    assert combined_cost(WorldState(()), OPEN, OnDemandFields(OPEN), P) == 0.0
    parked = WorldState((AgentState(0, 0, AgentStatus.PARKED), AgentState(4, 4, AgentStatus.PARKED)))
    assert evaluate_cost(MU1, parked, OPEN, OnDemandFields(OPEN), P).value == 0.0


def test_router_avoids_static_cells():
    gm = parse_map(".....\n.....")
    f = OnDemandFields(gm)
    r = Router(f, gm, frozenset({gm.encode(0, 2)}))
    traj = r.trajectory(gm.encode(0, 4), gm.encode(0, 0))
    assert gm.encode(0, 2) not in traj.tolist()
    assert r.dist(gm.encode(0, 4), gm.encode(0, 0)) == 6
    assert Router(f).dist(gm.encode(0, 4), gm.encode(0, 0)) == 4


@given(st.integers(0, 5000), st.integers(1, 6), st.integers(0, 60), st.sampled_from([PARK, VANISH]),
       st.booleans(), st.booleans(), st.integers(0, 3))
def test_array_simulator_matches_stepwise(seed, m, steps, arrival, follow_on, reserve, clock):
    w = reachable_state(seed, m, steps)
    f = fields_for(w)
    reserved = frozenset(a.home for a in w.agents if a.home >= 0) if reserve else frozenset()
    sim = TrajectorySimulator(f, P, (MU1, MU2), arrival, WAREHOUSE)
    sim.reserved = reserved
    legs = state_legs(w, follow_on)
    for pol in (MU1, MU2.at(clock)):
        ref = evaluate_cost(pol, w, WAREHOUSE, f, P, arrival=arrival, follow_on=follow_on, reserved=reserved)
        got = sim.simulate([a.pos for a in w.agents], legs, pol)
        assert got.value == ref.value
        assert got.truncated == ref.truncated
    v, pol = sim.best([a.pos for a in w.agents], legs)
    assert v == combined_cost(w, WAREHOUSE, f, P, arrival=arrival, follow_on=follow_on, reserved=reserved)


@given(st.integers(0, 5000), st.integers(1, 6), st.integers(0, 60))
def test_base_control_is_feasible(seed, m, steps):
    w = reachable_state(seed, m, steps)
    f = fields_for(w)
    for pol in (MU1, MU2):
        for clock in (0, 3):
            u = base_control(pol, w, f, clock, WAREHOUSE)
            for i, a in enumerate(u):
                assert a in feasible_controls(w, WAREHOUSE, i)


@given(st.integers(0, 5000), st.integers(1, 6), st.integers(0, 60))
def test_min_property_and_determinism(seed, m, steps):
    w = reachable_state(seed, m, steps)
    f = fields_for(w)
    jbar = combined_cost(w, WAREHOUSE, f, P)
    assert jbar <= evaluate_cost(MU1, w, WAREHOUSE, f, P).value
    assert jbar <= evaluate_cost(MU2, w, WAREHOUSE, f, P).value
    assert combined_cost(w, WAREHOUSE, f, P) == jbar


@given(st.integers(0, 5000), st.integers(1, 6), st.integers(0, 60))
def test_collision_free_estimates_are_nonpositive(seed, m, steps):
    w = reachable_state(seed, m, steps)
    f = fields_for(w)
    est = evaluate_cost(MU1, w, WAREHOUSE, f, P)
    if est.value < P.c1 * 1e-3:
        assert est.value <= 0.0


def test_static_cells_are_the_standing_agents():
    agents = (AgentState(1, 1, AgentStatus.PARKED), AgentState(2, 5), AgentState(3, 3, AgentStatus.MALFUNCTIONED),
              AgentState(4, 7, AgentStatus.PARKED))
    assert static_cells(agents) == frozenset({1, 3})
