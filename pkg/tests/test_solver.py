"""Tests for value iteration, policy evaluation and the finite-horizon
expectimax.

The backup oracle re-derives Q-values by summing the factored kernel
triples directly, bypassing the dense operators; the finite-horizon runs
cross the recursive expectimax against repeated operator backups.
"""

import numpy as np
import pytest

from fidelityq.actions import Action
from fidelityq.cogchain import ChainRates, CogGrid
from fidelityq.errors import BudgetExceededError, PolicyMismatchError
from fidelityq.model import ModelParams, admissible, build_model
from fidelityq.solver import (
    HorizonSpec,
    ValuePolicyTable,
    action_values,
    bellman_backup,
    finite_horizon_table,
    finite_horizon_value,
    policy_evaluation,
    validate_policy,
    value_iteration,
)
from fidelityq.sojourn import ServiceFamily, SkipWaitSpec


def solver_params(**overrides):
    base = dict(
        queue_capacity=5,
        grid=CogGrid(n_intervals=4, star_index=2),
        rates=ChainRates.default(step_scale=0.8),
        service=ServiceFamily(
            base_mean={Action.NORMAL: 4.2, Action.HIGH: 6.0},
            curvature={Action.NORMAL: 5.0, Action.HIGH: 7.0},
            dispersion=12.0,
            support=30,
        ),
        skip_wait=SkipWaitSpec(skip_time=2, arrival_rate=0.4),
        holding_cost=0.05,
        reward_normal=1.0,
        reward_high=2.0,
        discount=0.9,
    )
    base.update(overrides)
    return ModelParams(**base)


@pytest.fixture(scope="module")
def model():
    return build_model(solver_params())


@pytest.fixture(scope="module")
def solution(model):
    return value_iteration(model)


def backup_oracle(model, values):
    """Q-values by direct summation over the factored kernel."""
    gamma = model.params.discount
    best = np.full((model.n_q, model.n_cog), -np.inf)
    for q in range(model.n_q):
        for cog in range(model.n_cog):
            for a in admissible(q, cog, model.grid):
                total = model.immediate_reward(q, cog, a)
                for tau, p_tau, cog_dist, q_dist in model.kernel.entries(q, cog, a):
                    cont = q_dist @ values @ cog_dist
                    total += p_tau * gamma**tau * cont
                best[q, cog] = max(best[q, cog], total)
    return best


class TestBackup:
    def test_matches_kernel_triple_sum(self, model):
        rng = np.random.default_rng(11)
        values = rng.normal(size=(model.n_q, model.n_cog))
        backed, _ = bellman_backup(model, values)
        assert backed == pytest.approx(backup_oracle(model, values), abs=1e-10)

    def test_policy_is_admissible_everywhere(self, model):
        rng = np.random.default_rng(3)
        _, policy = bellman_backup(model, rng.normal(size=(model.n_q, model.n_cog)))
        validate_policy(model, policy)

    def test_empty_queue_always_waits(self, model, solution):
        assert all(sym == "W" for sym in solution.policy[0])
        assert not np.any(solution.policy[1:] == "W")

    def test_backup_never_yields_nan(self, model):
        values = np.zeros((model.n_q, model.n_cog))
        backed, _ = bellman_backup(model, values)
        assert np.all(np.isfinite(backed))


class TestValueIteration:
    def test_converges_tightly(self, solution):
        assert solution.converged
        assert solution.residual <= solution.epsilon
        assert solution.sweeps == len(solution.residual_history)

    def test_fixed_point(self, model, solution):
        backed, _ = bellman_backup(model, solution.values)
        gap = np.max(np.abs(backed - solution.values))
        assert gap <= 10 * solution.epsilon

    def test_greedy_matches_value(self, model, solution):
        av = action_values(model, solution.values)
        for q in range(model.n_q):
            for cog in range(model.n_cog):
                a = Action(str(solution.policy[q, cog]))
                assert av[a][q, cog] == pytest.approx(
                    solution.values[q, cog], abs=10 * solution.epsilon
                )

    def test_value_bounded_by_reward_over_contraction(self, model, solution):
        r_max = 0.0
        for a, mask in model.admissible_mask.items():
            table = model.reward_table(a)
            r_max = max(r_max, np.nanmax(np.abs(table[mask])))
        bound = r_max / (1.0 - model.max_discount_transform)
        assert np.max(np.abs(solution.values)) <= bound

    def test_late_residuals_contract(self, model, solution):
        h = solution.residual_history
        beta = model.max_discount_transform
        assert h[-1] <= beta * h[-2] * (1.0 + 1e-6)
        assert solution.contraction_estimate <= beta + 1e-6

    def test_deterministic_across_rebuilds(self, solution):
        again = value_iteration(build_model(solver_params()))
        assert np.array_equal(again.values, solution.values)
        assert np.array_equal(again.policy, solution.policy)

    def test_sweep_cap_reports_nonconvergence(self, model):
        capped = value_iteration(model, max_sweeps=3)
        assert not capped.converged
        assert capped.sweeps == 3
        assert capped.residual > capped.epsilon

    def test_contraction_estimate_edge_cases(self):
        t = ValuePolicyTable(
            values=np.zeros(1),
            policy=np.array(["W"]),
            residual=0.0,
            sweeps=1,
            converged=True,
            epsilon=1e-9,
            residual_history=[1.0],
        )
        assert np.isnan(t.contraction_estimate)
        t.residual_history = [1.0, 0.5]
        assert t.contraction_estimate == 0.5


class TestPolicyEvaluation:
    def test_optimal_policy_recovers_optimal_value(self, model, solution):
        v_pi = policy_evaluation(model, solution.policy)
        assert v_pi == pytest.approx(solution.values, abs=1e-6)

    def test_solves_the_linear_fixed_point(self, model, solution):
        v_pi = policy_evaluation(model, solution.policy)
        flat = v_pi.reshape(-1)
        for q in range(model.n_q):
            for cog in range(model.n_cog):
                s = q * model.n_cog + cog
                a = Action(str(solution.policy[q, cog]))
                rhs = model.immediate_reward(q, cog, a) + model.operators[a][s] @ flat
                assert flat[s] == pytest.approx(rhs, abs=1e-9)

    def test_matches_iterative_evaluation(self, model):
        policy = np.full((model.n_q, model.n_cog), "S", dtype="<U1")
        policy[0] = "W"
        direct = policy_evaluation(model, policy).reshape(-1)
        # power iteration on the same affine map, independently assembled
        r_pi = np.empty(model.n_states)
        rows = np.empty((model.n_states, model.n_states))
        for q in range(model.n_q):
            for cog in range(model.n_cog):
                s = q * model.n_cog + cog
                a = Action(str(policy[q, cog]))
                r_pi[s] = model.immediate_reward(q, cog, a)
                rows[s] = model.operators[a][s]
        v = np.zeros(model.n_states)
        for _ in range(600):
            v = r_pi + rows @ v
        assert direct == pytest.approx(v, abs=1e-8)

    def test_suboptimal_policy_is_dominated(self, model, solution):
        policy = np.full((model.n_q, model.n_cog), "S", dtype="<U1")
        policy[0] = "W"
        v_pi = policy_evaluation(model, policy)
        assert np.all(v_pi <= solution.values + 1e-9)
        assert np.max(solution.values - v_pi) > 1e-3

    def test_rejects_bad_policies(self, model):
        with pytest.raises(PolicyMismatchError):
            validate_policy(model, np.full((2, 2), "S"))
        bad = np.full((model.n_q, model.n_cog), "S", dtype="<U1")
        bad[0] = "W"
        bad[3, 0] = "R"  # rest below the resting level
        with pytest.raises(PolicyMismatchError):
            validate_policy(model, bad)
        lazy = np.full((model.n_q, model.n_cog), "W", dtype="<U1")
        with pytest.raises(PolicyMismatchError):
            validate_policy(model, lazy)


class TestFiniteHorizon:
    def test_zero_stages_is_terminal_cost(self, model):
        spec = HorizonSpec(n_stages=0, terminal_cost=0.7)
        assert finite_horizon_value(model, spec, (4, 2)) == pytest.approx(-2.8)
        assert finite_horizon_value(model, spec, (0, 0)) == 0.0

    def test_stages_match_repeated_backups(self, model):
        spec = HorizonSpec(n_stages=3, terminal_cost=0.7)
        values = -0.7 * np.arange(model.n_q)[:, None] * np.ones((1, model.n_cog))
        for _ in range(3):
            values, _ = bellman_backup(model, values)
        table = finite_horizon_table(model, spec)
        assert table == pytest.approx(values, abs=1e-10)

    def test_single_stage_matches_backup(self, model):
        spec = HorizonSpec(n_stages=1, terminal_cost=0.0)
        zero = np.zeros((model.n_q, model.n_cog))
        backed, _ = bellman_backup(model, zero)
        got = finite_horizon_value(model, spec, (3, 3))
        assert got == pytest.approx(backed[3, 3], abs=1e-12)

    def test_node_budget_enforced(self, model):
        spec = HorizonSpec(n_stages=4, terminal_cost=0.7, node_budget=10)
        with pytest.raises(BudgetExceededError):
            finite_horizon_value(model, spec, (5, 4))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            HorizonSpec(n_stages=-1, terminal_cost=0.0)
        with pytest.raises(ValueError):
            HorizonSpec(n_stages=2, terminal_cost=-0.5)
