import numpy as np
import pytest

from oracles import budgeted_policy_iteration, random_instance

from londi.budget import (
    AugmentedState,
    BudgetSpec,
    augment_with_budget,
    budget_step,
    next_remaining,
    solve_budgeted,
)
from londi.envs import HALLWAY, RoomsObservation, build_rooms_world
from londi.mdp_core import TabularMDP, greedy_policy, policy_evaluation, value_iteration
from londi.policies import make_provider_pair
from londi.switching import loads_solution_table, solve_switcher
from londi.trainer import TableSwitcher, run_episode


def instance(seed, S=5, A=3, terminal=True):
    P, R, gamma, pi_q, pi_d, terms = random_instance(np.random.default_rng(seed), S, A, terminal=terminal)
    return TabularMDP(P, R, gamma, frozenset(terms)), pi_q, pi_d


def corridor(n_cells=4, bonus_at=2):
    """Straight corridor ending in a terminal cell.

    Action 0 advances, action 1 stalls. QUICK always stalls w.p. 0.5, DEEP
    always advances. Entering the terminal pays 1; stepping out of
    ``bonus_at`` with action 0 pays an extra 2.
    """
    S = n_cells + 1
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2))
    for s in range(n_cells):
        P[s, 0, s + 1] = 1.0
        P[s, 1, s] = 1.0
    P[n_cells, :, n_cells] = 1.0
    R[n_cells - 1, 0] = 1.0
    R[bonus_at, 0] += 2.0
    pi_q = np.full((S, 2), 0.5)
    pi_d = np.tile([1.0, 0.0], (S, 1))
    return TabularMDP(P, R, 0.9, frozenset({n_cells})), pi_q, pi_d


class TestBudgetStep:
    def test_activation_consumes_one(self):
        assert budget_step(AugmentedState(3, 2), 1) == AugmentedState(3, 1)

    def test_quick_keeps_budget(self):
        assert budget_step(AugmentedState(3, 2), 0) == AugmentedState(3, 2)

    def test_clamped_at_minus_one(self):
        x = budget_step(AugmentedState(0, 0), 1)
        assert x.remaining == -1
        assert budget_step(x, 1).remaining == -1

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            budget_step(AugmentedState(0, -2), 0)
        with pytest.raises(ValueError):
            budget_step(AugmentedState(0, 1), 2)

    def test_next_remaining(self):
        assert [next_remaining(k, 1) for k in (2, 1, 0, -1)] == [1, 0, -1, -1]
        assert next_remaining(0, 0) == 0


class TestBudgetSpec:
    @pytest.mark.parametrize("kwargs", [{"n": -1}, {"n": 1.5}, {"n": 1, "penalty": -1.0},
                                        {"n": 1, "cost": float("nan")}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            BudgetSpec(**kwargs)


class TestAugmentation:
    def test_layout(self):
        mdp, pi_q, pi_d = instance(0)
        bmdp = augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(2, 1.0, 0.1))
        assert bmdp.levels == 4
        assert bmdp.mdp.n_states == 20
        assert bmdp.index(1, -1) == 4
        assert bmdp.state(bmdp.index(3, 2)) == AugmentedState(3, 2)
        with pytest.raises(ValueError):
            bmdp.index(0, 3)

    def test_state_cap(self):
        mdp, pi_q, pi_d = instance(0)
        with pytest.raises(ValueError, match="exceeds cap"):
            augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(10), state_cap=50)

    def test_penalty_reward(self):
        mdp, pi_q, pi_d = instance(1)
        spec = BudgetSpec(1, 5.0, 0.2)
        bmdp = augment_with_budget(mdp, pi_q, pi_d, spec)
        r_d = (pi_d[0] * mdp.reward[0]).sum()
        r_q = (pi_q[0] * mdp.reward[0]).sum()
        assert bmdp.mdp.reward[bmdp.index(0, 1), 1] == pytest.approx(r_d - 0.2)
        assert bmdp.mdp.reward[bmdp.index(0, 0), 1] == pytest.approx(r_d - 0.2 - 5.0)
        assert bmdp.mdp.reward[bmdp.index(0, -1), 0] == pytest.approx(r_q - 5.0)


class TestSolveBudgeted:
    @pytest.mark.parametrize("seed", range(6))
    def test_matches_policy_iteration_oracle(self, seed):
        mdp, pi_q, pi_d = instance(seed)
        n, c, pen = seed % 3, 0.05 * seed, 0.5 * seed
        sol = solve_budgeted(augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(n, pen, c)), 1e-12)
        v_ref, g_ref = budgeted_policy_iteration(mdp.transition, mdp.reward, mdp.gamma, pi_q, pi_d, n, c, pen,
                                                 tuple(mdp.terminal_states))
        np.testing.assert_allclose(sol.v, v_ref, atol=1e-8)
        np.testing.assert_array_equal(sol.g, g_ref)

    def test_zero_budget_huge_penalty_never_activates(self):
        mdp, pi_q, pi_d = instance(2)
        sol = solve_budgeted(augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(0, 1e6, 0.0)))
        assert sol.decision(0, 0) == 0
        assert not sol.g[:, 1].any()

    @pytest.mark.parametrize("seed", range(4))
    def test_zero_penalty_equals_unbudgeted(self, seed):
        mdp, pi_q, pi_d = instance(seed)
        sol = solve_budgeted(augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(1, 0.0, 0.1)), 1e-12)
        ref = solve_switcher(mdp, pi_q, pi_d, 0.1, tol=1e-12)
        for j in range(sol.v.shape[1]):
            np.testing.assert_allclose(sol.v[:, j], ref.v_star, atol=1e-8)

    @pytest.mark.parametrize("seed", range(4))
    def test_monotone_in_remaining(self, seed):
        mdp, pi_q, pi_d = instance(seed)
        sol = solve_budgeted(augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(3, 2.0, 0.05)))
        assert np.all(np.diff(sol.v, axis=1) >= -1e-9)

    def test_slack_budget_matches_unbudgeted(self):
        # episodes last at most 4 decisions, so a budget of 4 never binds
        mdp, pi_q, pi_d = corridor()
        sol = solve_budgeted(augment_with_budget(mdp, np.tile([1.0, 0.0], (5, 1)), pi_d, BudgetSpec(4, 50.0, 0.1)),
                             1e-12)
        ref = solve_switcher(mdp, np.tile([1.0, 0.0], (5, 1)), pi_d, 0.1, tol=1e-12)
        np.testing.assert_allclose(sol.base_values(), ref.v_star, atol=1e-8)

    def test_single_activation_goes_to_the_bonus_cell(self):
        mdp, pi_q, pi_d = corridor(bonus_at=2)
        sol = solve_budgeted(augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(1, 100.0, 0.0)), 1e-12)
        assert sol.decision(0, 1) == 0
        assert sol.decision(1, 1) == 0
        assert sol.decision(2, 1) == 1
        assert not sol.g[:, 1].any()  # budget spent: no more activations

    def test_terminal_decisions_are_quick(self):
        mdp, pi_q, pi_d = corridor()
        sol = solve_budgeted(augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(2, 1.0, 0.0)))
        assert not sol.g[4].any()
        np.testing.assert_array_equal(sol.v[4], 0.0)

    def test_text_round_trip(self, tmp_path):
        mdp, pi_q, pi_d = corridor()
        sol = solve_budgeted(augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(1, 10.0, 0.1)))
        path = tmp_path / "b.txt"
        sol.save(path)
        rows = loads_solution_table(path.read_text())
        assert len(rows) == 5 * 3
        assert [r["remaining"] for r in rows[:3]] == [-1, 0, 1]
        assert [r["g"] for r in rows] == list(sol.g.ravel())


def placement_value(bmdp, s_act, start):
    """Start value of the policy that spends its single activation on the first visit to ``s_act``."""
    X = bmdp.mdp.n_states
    pi = np.zeros((X, 2))
    pi[:, 0] = 1.0
    x = bmdp.index(s_act, 1)
    pi[x] = [0.0, 1.0]
    return policy_evaluation(bmdp.mdp, pi, 1e-12)[bmdp.index(start, 1)]


class TestPlacementOracle:
    def test_single_activation_matches_exhaustive_placement(self):
        mdp, pi_q, _ = corridor(bonus_at=1)
        pi_d = greedy_policy(mdp, value_iteration(mdp, 1e-12))
        bmdp = augment_with_budget(mdp, pi_q, pi_d, BudgetSpec(1, 100.0, 0.01))
        sol = solve_budgeted(bmdp, 1e-12)
        live = [s for s in range(mdp.n_states) if s not in mdp.terminal_states]
        values = {s: placement_value(bmdp, s, 0) for s in live}
        best = max(values, key=values.get)
        assert sol.decision(best, 1) == 1
        assert sol.value(0, 1) == pytest.approx(max(values.values()), abs=1e-8)


@pytest.fixture(scope="module")
def rooms_setup():
    env = build_rooms_world()
    mdp = env.export_mdp()
    quick, deep = make_provider_pair(mdp, env.start_state)
    return env, mdp, quick, deep


class TestRoomsBudget:
    def test_monotone_in_budget(self, rooms_setup):
        env, mdp, quick, deep = rooms_setup
        starts = [solve_budgeted(augment_with_budget(mdp, quick.probabilities, deep.probabilities,
                                                     BudgetSpec(n, 10.0, 0.0))).base_values()
                  for n in range(7)]
        for lo, hi in zip(starts, starts[1:]):
            assert np.all(hi >= lo - 1e-9)

    def test_single_activation_at_hallway(self, rooms_setup):
        env, mdp, quick, deep = rooms_setup
        sol = solve_budgeted(augment_with_budget(mdp, quick.probabilities, deep.probabilities,
                                                 BudgetSpec(1, 10.0, 0.0)))
        fresh = env.featurizer.encode(RoomsObservation(HALLWAY, frozenset()))
        assert sol.decision(fresh, 1) == 1
        corridor_states = [s for s in range(mdp.n_states) if env.location(s).startswith("corridor")]
        assert not any(sol.decision(s, 1) for s in corridor_states)

    def test_oracle_rollouts_respect_budget(self, rooms_setup):
        env, mdp, quick, deep = rooms_setup
        rng = np.random.default_rng(0)
        for n in (1, 2):
            sol = solve_budgeted(augment_with_budget(mdp, quick.probabilities, deep.probabilities,
                                                     BudgetSpec(n, 2 * mdp.value_bound, 0.0)))
            switcher = TableSwitcher(sol.g, n)
            used = [run_episode(env, quick, deep, switcher, rng, budget=n, penalty=2 * mdp.value_bound)
                    .consulted_activations for _ in range(2000)]
            assert max(used) <= n
            assert max(used) >= 1
