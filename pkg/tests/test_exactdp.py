import numpy as np
import pytest

from warehouse_rollout.dynamics import AgentState, CostParams, WorldState
from warehouse_rollout.exactdp import (
    CAUTIOUS,
    SHORTEST_PATH,
    TERMINAL,
    ProblemTooLarge,
    apply_bellman,
    apply_policy,
    argmax_pick,
    base_policy,
    bellman_residual,
    check_instance,
    contraction_holds,
    default_battery,
    enumerate_problem,
    optimal_vi,
    policy_eval_vi,
    rollout_table,
    verify_bounds,
)
from warehouse_rollout.gridmap import parse_map
from warehouse_rollout.pathcache import OnDemandFields
from warehouse_rollout.policies import MU1, evaluate_cost

P = CostParams()


def test_state_counts_match_closed_form():
    gm = parse_map("...")
    assert enumerate_problem(gm, [2]).n == 3 + 1  # three undone placements plus the terminal
    gm = parse_map("..\n..")
    k = 4
    # both undone: ordered pairs; one done on its target: the other anywhere else
    assert enumerate_problem(gm, [0, 3]).n == 1 + k * (k - 1) + 2 * (k - 1)


def test_single_agent_values_are_geometric():
    gm = parse_map("....")
    prob = enumerate_problem(gm, [3])
    J = policy_eval_vi(prob, base_policy(prob), tol=1e-13)
    for s in range(1, prob.n):
        (p,), _ = prob.states[s]
        assert J[s] == pytest.approx(P.alpha ** (3 - p) * P.c2, rel=1e-12)
    assert J[TERMINAL] == 0.0


@pytest.mark.parametrize("text,target", [("....\n.#..\n....", 3), ("...\n.#.\n...", 8), ("....\n....", 5)])
def test_single_agent_matches_simulation(text, target):
    gm = parse_map(text)
    prob = enumerate_problem(gm, [target])
    J = policy_eval_vi(prob, base_policy(prob), tol=1e-13)
    for s in range(1, prob.n):
        (p,), (done,) = prob.states[s]
        est = evaluate_cost(MU1, WorldState((AgentState(p, target),)), gm, OnDemandFields(gm), P)
        assert J[s] == pytest.approx(est.value, rel=1e-12)


def test_collisions_end_in_the_terminal():
    gm = parse_map("...")
    prob = enumerate_problem(gm, [2, 0])
    hits = np.flatnonzero(prob.coll)
    assert hits.size
    assert np.all(prob.nxt[hits] == TERMINAL)
    assert np.all(prob.cost[hits] >= P.c1 * prob.coll[hits] + prob.m * P.c2)


def test_optimal_is_below_every_base():
    gm = parse_map("...\n...")
    prob = enumerate_problem(gm, [2, 3])
    J_star = optimal_vi(prob, tol=1e-12)
    for kind in (SHORTEST_PATH, CAUTIOUS):
        J = policy_eval_vi(prob, base_policy(prob, kind), tol=1e-12)
        assert np.all(J_star <= J + 1e-9 * np.maximum(1, np.abs(J)))


def test_unknown_base_policy():
    prob = enumerate_problem(parse_map("..."), [2])
    with pytest.raises(ValueError):
        base_policy(prob, "greedy")


def test_guard_refuses_large_problems():
    with pytest.raises(ProblemTooLarge):
        enumerate_problem(parse_map("\n".join(["....."] * 5)), [0, 4, 20, 24])


def test_rollout_bounds_hold_on_small_instances():
    for inst in default_battery(seed=5, repeats=1)[:6]:
        r = check_instance(inst)
        assert r.report.ok, r.report.dumps
        assert r.contraction_ok and r.monotone_ok


def test_argmax_negative_control_breaks_the_bounds():
    broken = 0
    for inst in default_battery(seed=0, repeats=1):
        prob = enumerate_problem(inst.gridmap, inst.targets)
        bases = [base_policy(prob, SHORTEST_PATH), base_policy(prob, CAUTIOUS)]
        values = [policy_eval_vi(prob, b) for b in bases]
        table = rollout_table(prob, bases, values, pick=argmax_pick)
        broken += not verify_bounds(prob, values, table).ok
    assert broken > 0


def test_operators_are_monotone():
    rng = np.random.default_rng(0)
    prob = enumerate_problem(parse_map("...\n..."), [0, 5])
    pol = base_policy(prob)
    for _ in range(1000):
        J = rng.normal(size=prob.n) * 10.0 ** rng.integers(0, 6)
        Jp = J + np.abs(rng.normal(size=prob.n)) * 10.0 ** rng.integers(-3, 6)
        assert np.all(apply_policy(prob, pol, J) <= apply_policy(prob, pol, Jp))
        assert np.all(apply_bellman(prob, J) <= apply_bellman(prob, Jp))


def test_residual_after_policy_evaluation():
    prob = enumerate_problem(parse_map("....\n...."), [0, 7])
    pol = base_policy(prob)
    J = policy_eval_vi(prob, pol, tol=1e-13)
    res = bellman_residual(prob, pol, J)
    assert np.all(res <= 1e-8 * np.maximum(1.0, np.abs(J)))
    calm = np.abs(J) < 1e12  # states whose base run never collides
    assert np.all(res[calm] < 1e-8)


def test_contraction_helper():
    assert contraction_holds([1.0, 0.5, 0.25], 0.999, 0.0)
    assert not contraction_holds([1.0, 1.5], 0.999, 0.0)
