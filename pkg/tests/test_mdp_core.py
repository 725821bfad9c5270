import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import linear_value, mixture

from londi.mdp_core import (
    SolverError,
    TabularMDP,
    bellman_optimality,
    deterministic_policy,
    dumps_mdp,
    evaluate_linear,
    greedy_policy,
    load_mdp,
    loads_mdp,
    policy_evaluation,
    q_from_values,
    random_mdp,
    save_mdp,
    uniform_policy,
    value_iteration,
)


def chain_abc():
    """A -> B -> C (terminal); reward 1 on entering C."""
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[1, 0, 2] = P[2, 0, 2] = 1.0
    R = np.array([[0.0], [1.0], [0.0]])
    return TabularMDP(P, R, 0.9, frozenset({2}))


def backward_induction(P, R, gamma, horizon):
    v = np.zeros(P.shape[0])
    for _ in range(horizon):
        v = (R + gamma * P @ v).max(axis=1)
    return v


class TestValidation:
    def test_rows_must_sum_to_one(self):
        P = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
        with pytest.raises(ValueError, match="sum to 1"):
            TabularMDP(P, np.zeros((2, 1)), 0.9)

    def test_row_sum_tolerance(self):
        P = np.array([[[0.5, 0.5 + 5e-10]], [[0.0, 1.0]]])
        TabularMDP(P, np.zeros((2, 1)), 0.9)

    def test_entries_in_unit_interval(self):
        P = np.array([[[1.5, -0.5]], [[0.0, 1.0]]])
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            TabularMDP(P, np.zeros((2, 1)), 0.9)

    @pytest.mark.parametrize("gamma", [1.0, -0.1, 1.5])
    def test_gamma_range(self, gamma):
        with pytest.raises(ValueError, match="gamma"):
            TabularMDP(np.ones((1, 1, 1)), np.zeros((1, 1)), gamma)

    def test_non_finite_reward_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            TabularMDP(np.ones((1, 1, 1)), np.array([[np.nan]]), 0.5)

    def test_terminal_must_self_loop_with_zero_reward(self):
        P = np.zeros((2, 1, 2))
        P[:, 0, 1] = 1.0
        with pytest.raises(ValueError, match="self-loop"):
            TabularMDP(P, np.array([[0.0], [1.0]]), 0.9, frozenset({1}))
        with pytest.raises(ValueError, match="self-loop"):
            TabularMDP(P, np.zeros((2, 1)), 0.9, frozenset({0}))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="reward shape"):
            TabularMDP(np.ones((1, 2, 1)), np.zeros((1, 3)), 0.5)

    def test_arrays_are_frozen_copies(self):
        P = np.ones((1, 1, 1))
        mdp = TabularMDP(P, np.zeros((1, 1)), 0.5)
        P[0, 0, 0] = 7.0
        assert mdp.transition[0, 0, 0] == 1.0
        with pytest.raises(ValueError):
            mdp.reward[0, 0] = 1.0

    def test_policy_dimension_mismatch(self):
        mdp = chain_abc()
        with pytest.raises(ValueError, match="shape"):
            policy_evaluation(mdp, np.ones((3, 2)) / 2)


class TestValueIteration:
    def test_single_state_geometric_series_exact(self):
        mdp = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
        assert value_iteration(mdp, 1e-8)[0] == 2.0

    def test_zero_rewards(self):
        mdp = random_mdp(np.random.default_rng(0), 6, 3, 0.9).with_reward(np.zeros((6, 3)))
        assert np.all(value_iteration(mdp) == 0.0)

    def test_chain_against_backward_induction(self):
        mdp = chain_abc()
        v = value_iteration(mdp, 1e-12)
        ref = backward_induction(mdp.transition, mdp.reward, mdp.gamma, 50)
        assert v[0] == pytest.approx(0.9, abs=1e-12)
        assert v[1] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(v, ref, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_residual_within_tol(self, seed):
        mdp = random_mdp(np.random.default_rng(seed), 8, 3, 0.95)
        tol = 1e-8
        v = value_iteration(mdp, tol, polish=False)
        assert np.max(np.abs(bellman_optimality(mdp, v) - v)) <= tol

    def test_iteration_cap_raises_with_residual(self):
        mdp = random_mdp(np.random.default_rng(1), 5, 2, 0.99)
        with pytest.raises(SolverError) as exc:
            value_iteration(mdp, 1e-12, max_iter=3)
        assert exc.value.residual > 0

    def test_rejects_nonpositive_tol(self):
        with pytest.raises(ValueError):
            value_iteration(chain_abc(), 0.0)

    def test_monotone_in_rewards(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp(rng, 7, 3, 0.9)
        v = value_iteration(mdp, 1e-11)
        for _ in range(10):
            R = mdp.reward.copy()
            R[rng.integers(7), rng.integers(3)] += rng.uniform(0.0, 1.0)
            assert np.all(value_iteration(mdp.with_reward(R), 1e-11) >= v - 1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounded_by_value_bound(self, seed):
        mdp = random_mdp(np.random.default_rng(seed), 5, 2, 0.8)
        assert np.max(np.abs(value_iteration(mdp))) <= mdp.value_bound + 1e-9


class TestOptimalityOperator:
    def test_contraction(self):
        rng = np.random.default_rng(11)
        violations = 0
        for _ in range(100):
            mdp = random_mdp(rng, 10, 4, 0.9)
            v1, v2 = rng.normal(size=10) * 5, rng.normal(size=10) * 5
            lhs = np.max(np.abs(bellman_optimality(mdp, v1) - bellman_optimality(mdp, v2)))
            violations += lhs > 0.9 * np.max(np.abs(v1 - v2)) + 1e-12
        assert violations == 0


class TestPolicyEvaluation:
    def test_symmetric_two_state(self):
        P = np.full((2, 2, 2), 0.5)
        mdp = TabularMDP(P, np.full((2, 2), 3.0), 0.8)
        np.testing.assert_allclose(policy_evaluation(mdp, uniform_policy(mdp)), 3.0 / 0.2, atol=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_greedy_of_optimal_reproduces_values(self, seed):
        mdp = random_mdp(np.random.default_rng(seed), 6, 3, 0.9)
        tol = 1e-9
        v = value_iteration(mdp, tol)
        np.testing.assert_allclose(policy_evaluation(mdp, greedy_policy(mdp, v), tol), v, atol=2 * tol / (1 - 0.9))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_linear_solve(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 5, 3, 0.9)
        pi = rng.dirichlet(np.ones(3), size=5)
        ref = linear_value(*mixture(mdp.transition, mdp.reward, pi), mdp.gamma)
        np.testing.assert_allclose(policy_evaluation(mdp, pi, 1e-12), ref, atol=1e-8)
        np.testing.assert_allclose(evaluate_linear(mdp, pi), ref, atol=1e-10)

    def test_residual_within_tol(self):
        rng = np.random.default_rng(5)
        mdp = random_mdp(rng, 6, 2, 0.95)
        pi = rng.dirichlet(np.ones(2), size=6)
        v = policy_evaluation(mdp, pi, 1e-7)
        Tv = (pi * q_from_values(mdp, v)).sum(axis=1)
        assert np.max(np.abs(Tv - v)) <= 1e-7

    def test_invalid_policy_rows(self):
        mdp = chain_abc()
        with pytest.raises(ValueError, match="sum to 1"):
            policy_evaluation(mdp, np.full((3, 1), 0.5))


class TestQFromValues:
    def test_zero_continuation(self):
        mdp = random_mdp(np.random.default_rng(0), 4, 2)
        np.testing.assert_array_equal(q_from_values(mdp, np.zeros(4)), mdp.reward)

    def test_deterministic_lookahead(self):
        P = np.zeros((2, 1, 2))
        P[:, 0, 1] = 1.0
        mdp = TabularMDP(P, np.zeros((2, 1)), 0.9)
        assert q_from_values(mdp, np.array([0.0, 10.0]))[0, 0] == pytest.approx(9.0)

    def test_optimality_identity(self):
        mdp = random_mdp(np.random.default_rng(2), 6, 3, 0.9)
        tol = 1e-10
        v = value_iteration(mdp, tol)
        np.testing.assert_allclose(q_from_values(mdp, v).max(axis=1), v, atol=tol)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            q_from_values(chain_abc(), np.array([0.0, np.inf, 0.0]))


class TestPolicies:
    def test_deterministic_policy(self):
        mdp = random_mdp(np.random.default_rng(0), 3, 2)
        pi = deterministic_policy(mdp, [1, 0, 1])
        np.testing.assert_array_equal(pi.argmax(axis=1), [1, 0, 1])

    def test_greedy_ties_go_to_lowest_action(self):
        mdp = TabularMDP(np.ones((1, 3, 1)), np.zeros((1, 3)), 0.5)
        np.testing.assert_array_equal(greedy_policy(mdp, np.zeros(1)), [[1.0, 0.0, 0.0]])


class TestFileFormat:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        mdp = random_mdp(rng, 4, 3, 0.9, sparsity=0.4)
        path = tmp_path / "m.mdp"
        save_mdp(mdp, path)
        back = load_mdp(path)
        np.testing.assert_array_equal(back.transition, mdp.transition)
        np.testing.assert_array_equal(back.reward, mdp.reward)
        assert back.gamma == mdp.gamma
        assert dumps_mdp(back) == path.read_text()

    def test_terminal_round_trip(self):
        mdp = chain_abc()
        assert loads_mdp(dumps_mdp(mdp)).terminal_states == {2}

    def test_missing_header_fields(self):
        with pytest.raises(ValueError, match="declare"):
            loads_mdp("states 2\nactions 1\n")

    def test_unknown_record(self):
        with pytest.raises(ValueError, match="line 2"):
            loads_mdp("states 1\nX 0\n")

    def test_sparsity_keeps_a_successor(self):
        mdp = random_mdp(np.random.default_rng(4), 6, 2, sparsity=0.99)
        assert np.all(mdp.transition.sum(axis=2) > 0.999)
