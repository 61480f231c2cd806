"""Value iteration, policy evaluation and the finite-horizon oracle."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve

from .actions import ACTIONS, TIE_ORDER, Action, from_symbol
from .errors import BudgetExceededError, PolicyMismatchError
from .model import admissible

DEFAULT_EPSILON = 1e-9
DEFAULT_MAX_SWEEPS = 5000


@dataclass
class ValuePolicyTable:
    """Result of a solve: value table, greedy policy and convergence data.

    ``policy`` holds one-letter action symbols; ``residual_history`` the
    sup-norm change per sweep.
    """

    values: np.ndarray
    policy: np.ndarray
    residual: float
    sweeps: int
    converged: bool
    epsilon: float
    residual_history: list = field(default_factory=list)

    @property
    def contraction_estimate(self):
        h = self.residual_history
        if len(h) < 2 or h[-2] == 0:
            return float("nan")
        return h[-1] / h[-2]


def action_values(model, values):
    """Q(s, a) = R(s, a) + (T_a V)(s) for every action, unmasked."""
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    out = {}
    for a in ACTIONS:
        q = model.reward_table(a).reshape(-1) + model.operators[a] @ flat
        out[a] = q.reshape(model.n_q, model.n_cog)
    return out


def bellman_backup(model, values):
    """One synchronous optimality backup.

    Returns the backed-up value table and the greedy policy; on exact ties
    the action earlier in the fixed tie order wins.
    """
    av = action_values(model, values)
    best = np.full((model.n_q, model.n_cog), -np.inf)
    policy = np.full((model.n_q, model.n_cog), "?", dtype="<U1")
    for a in TIE_ORDER:
        qa = np.where(model.admissible_mask[a], av[a], -np.inf)
        take = qa > best
        best = np.where(take, qa, best)
        policy = np.where(take, a.value, policy)
    return best, policy


def value_iteration(model, epsilon=DEFAULT_EPSILON, max_sweeps=DEFAULT_MAX_SWEEPS):
    """Iterate optimality backups from the all-zero table.

    Stops when the sup-norm change drops to ``epsilon``. Non-convergence
    within ``max_sweeps`` is reported through ``converged``, not raised.
    """
    values = np.zeros((model.n_q, model.n_cog))
    policy = None
    history = []
    for sweep in range(1, max_sweeps + 1):
        new_values, policy = bellman_backup(model, values)
        residual = float(np.max(np.abs(new_values - values)))
        history.append(residual)
        values = new_values
        if residual <= epsilon:
            return ValuePolicyTable(
                values=values,
                policy=policy,
                residual=residual,
                sweeps=sweep,
                converged=True,
                epsilon=epsilon,
                residual_history=history,
            )
    return ValuePolicyTable(
        values=values,
        policy=policy,
        residual=history[-1] if history else np.inf,
        sweeps=len(history),
        converged=False,
        epsilon=epsilon,
        residual_history=history,
    )


def validate_policy(model, policy):
    """Check a symbol table covers the state space with admissible actions."""
    policy = np.asarray(policy)
    if policy.shape != (model.n_q, model.n_cog):
        raise PolicyMismatchError(
            f"policy shape {policy.shape} does not match the "
            f"{model.n_q}x{model.n_cog} state space"
        )
    for q in range(model.n_q):
        for cog in range(model.n_cog):
            a = from_symbol(str(policy[q, cog]))
            if a not in admissible(q, cog, model.grid):
                raise PolicyMismatchError(
                    f"policy action {a} inadmissible in state ({q},{cog})"
                )
    return policy


def policy_evaluation(model, policy):
    """Exact value of a stationary policy via the linear fixed point
    (I - T_pi) V = R_pi."""
    policy = validate_policy(model, policy)
    n = model.n_states
    t_pi = np.empty((n, n))
    r_pi = np.empty(n)
    for q in range(model.n_q):
        for cog in range(model.n_cog):
            s = q * model.n_cog + cog
            a = from_symbol(str(policy[q, cog]))
            t_pi[s] = model.operators[a][s]
            r_pi[s] = model.immediate_reward(q, cog, a)
    values = solve(np.eye(n) - t_pi, r_pi)
    return values.reshape(model.n_q, model.n_cog)


@dataclass(frozen=True)
class HorizonSpec:
    """Finite-horizon problem: ``n_stages`` decision epochs, terminal value
    -terminal_cost * q, and a cap on exhaustive-expansion work."""

    n_stages: int
    terminal_cost: float
    node_budget: int = 2_000_000

    def __post_init__(self):
        if self.n_stages < 0:
            raise ValueError("number of stages must be nonnegative")
        if self.terminal_cost < 0:
            raise ValueError("terminal cost must be nonnegative")


def finite_horizon_value(model, spec, state, _memo=None, _count=None):
    """Exact expectimax value of ``state`` over ``spec.n_stages`` epochs.

    Expands the kernel triples exhaustively with memoization on
    (state, stages-left); raises BudgetExceededError once the number of
    expanded kernel entries passes the node budget.
    """
    memo = {} if _memo is None else _memo
    count = [0] if _count is None else _count
    gamma = model.params.discount

    def value(q, cog, k):
        if k == 0:
            return -spec.terminal_cost * q
        key = (q, cog, k)
        if key in memo:
            return memo[key]
        best = -np.inf
        for a in admissible(q, cog, model.grid):
            total = model.immediate_reward(q, cog, a)
            for tau, p_tau, cog_dist, q_dist in model.kernel.entries(q, cog, a):
                count[0] += 1
                if count[0] > spec.node_budget:
                    raise BudgetExceededError(
                        f"expectimax expansion passed {spec.node_budget} kernel entries"
                    )
                acc = 0.0
                for c2 in np.nonzero(cog_dist)[0]:
                    pc = cog_dist[c2]
                    inner = 0.0
                    for q2 in np.nonzero(q_dist)[0]:
                        inner += q_dist[q2] * value(int(q2), int(c2), k - 1)
                    acc += pc * inner
                total += p_tau * gamma**tau * acc
            best = max(best, total)
        memo[key] = best
        return best

    return value(state[0], state[1], spec.n_stages)


def finite_horizon_table(model, spec):
    """Expectimax values for every state, sharing one memo table."""
    memo = {}
    count = [0]
    out = np.empty((model.n_q, model.n_cog))
    for q in range(model.n_q):
        for cog in range(model.n_cog):
            out[q, cog] = finite_horizon_value(
                model, spec, (q, cog), _memo=memo, _count=count
            )
    return out
