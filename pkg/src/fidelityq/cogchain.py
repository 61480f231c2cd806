"""Discrete-time birth-death chain for the operator's cognitive state.

The cognitive state lives on the uniform grid {0, 1/N, ..., 1}. Each action
drives the state with its own forward/backward per-step probabilities and
reflective boundaries, so a step matrix is tridiagonal and row-stochastic.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve

from .actions import Action
from .errors import InadmissibleRestError, InvalidRatesError, TailMassError

# Per-unit-time drift rates; multiplied by the step scale to obtain per-step
# probabilities. Waiting and resting relax the state downward, servicing
# pushes it upward, high fidelity harder than normal; skipping leaves it
# untouched.
UNIT_RATES = {
    Action.WAIT: (0.02, 0.5),
    Action.REST: (0.02, 0.5),
    Action.NORMAL: (0.6, 0.02),
    Action.HIGH: (1.1, 0.02),
    Action.SKIP: (0.0, 0.0),
}

FPT_TAIL_TOL = 1e-6


@dataclass(frozen=True)
class CogGrid:
    """Uniform cognitive grid with a distinguished resting level.

    Parameters
    ----------
    n_intervals : int
        Number of grid intervals N; levels are i/N for i = 0..N.
    star_index : int
        Index of the resting level cog*; must be interior.
    """

    n_intervals: int
    star_index: int

    def __post_init__(self):
        if self.n_intervals < 2:
            raise ValueError("cognitive grid needs at least 2 intervals")
        if not 0 < self.star_index < self.n_intervals:
            raise ValueError("resting level must be an interior grid point")

    @property
    def n_levels(self):
        return self.n_intervals + 1

    @property
    def levels(self):
        return np.arange(self.n_levels) / self.n_intervals

    @property
    def star_level(self):
        return self.star_index / self.n_intervals

    def level(self, index):
        return index / self.n_intervals


@dataclass(frozen=True)
class ChainRates:
    """Per-action forward/backward per-step transition probabilities.

    ``probs[action] = (p_forward, p_backward)``. Rows must stay stochastic
    (p_f + p_b <= 1) and respect the drift directions: relaxation dominates
    for WAIT and REST, excitation dominates for NORMAL and HIGH with the
    high-fidelity push strictly stronger, and SKIP is frozen.
    """

    probs: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for action in Action:
            if action not in self.probs:
                raise InvalidRatesError(f"missing rates for action {action}")
            pf, pb = (float(x) for x in self.probs[action])
            if pf < 0 or pb < 0:
                raise InvalidRatesError(f"negative rate for action {action}")
            if pf + pb > 1.0:
                raise InvalidRatesError(
                    f"rates for action {action} sum to {pf + pb:.4f} > 1; "
                    "per-step probabilities must leave a nonnegative "
                    "stay-put mass"
                )
            clean[action] = (pf, pb)
        object.__setattr__(self, "probs", clean)
        if self.probs[Action.SKIP] != (0.0, 0.0):
            raise InvalidRatesError("SKIP must not move the cognitive state")
        for action in (Action.WAIT, Action.REST):
            pf, pb = self.probs[action]
            if not pb > pf:
                raise InvalidRatesError(f"{action} must drift downward")
        for action in (Action.NORMAL, Action.HIGH):
            pf, pb = self.probs[action]
            if not pf > pb:
                raise InvalidRatesError(f"{action} must drift upward")
        if not self.probs[Action.HIGH][0] > self.probs[Action.NORMAL][0]:
            raise InvalidRatesError(
                "high fidelity must push the cognitive state harder than "
                "normal fidelity"
            )

    @classmethod
    def default(cls, step_scale=0.8, overrides=None):
        """Built-in drift rates scaled to per-step probabilities.

        ``step_scale`` converts the per-unit-time rates to probabilities for
        one discrete step; the default keeps every row stochastic including
        the strong high-fidelity push. ``overrides`` maps an action to a
        (forward, backward) pair of unit rates replacing the built-in one.
        """
        rates = dict(UNIT_RATES)
        if overrides:
            rates.update(overrides)
        probs = {
            a: (pf * step_scale, pb * step_scale) for a, (pf, pb) in rates.items()
        }
        return cls(probs=probs)

    def forward(self, action):
        return self.probs[action][0]

    def backward(self, action):
        return self.probs[action][1]


@dataclass(frozen=True)
class StepMatrix:
    """One-step transition matrix of the cognitive chain under one action."""

    action: Action
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def n_levels(self):
        return self.matrix.shape[0]


def build_step_matrix(grid, rates, action):
    """Assemble the tridiagonal reflective step matrix for one action.

    Interior row i carries (p_b, 1 - p_f - p_b, p_f) on the sub-, main and
    super-diagonal; the bottom row reflects as (1 - p_f, p_f) and the top
    row as (p_b, 1 - p_b).

    Parameters
    ----------
    grid : CogGrid
    rates : ChainRates
    action : Action

    Returns
    -------
    StepMatrix
    """
    pf, pb = rates.probs[action]
    if pf + pb > 1.0:
        raise InvalidRatesError(f"rates for {action} exceed a stochastic row")
    n = grid.n_levels
    m = np.zeros((n, n))
    for i in range(n):
        if i == 0:
            m[i, 0] = 1.0 - pf
            m[i, 1] = pf
        elif i == n - 1:
            m[i, i - 1] = pb
            m[i, i] = 1.0 - pb
        else:
            m[i, i - 1] = pb
            m[i, i] = 1.0 - pf - pb
            m[i, i + 1] = pf
    return StepMatrix(action=action, matrix=m)


def evolve(step, cog_index, tau):
    """Distribution of the cognitive state after ``tau`` steps.

    Returns row ``cog_index`` of the ``tau``-th matrix power.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    power = np.linalg.matrix_power(step.matrix, tau)
    return power[cog_index].copy()


def step_powers(step, t_max):
    """Matrix powers P^0 .. P^t_max stacked as one array.

    Computed by repeated multiplication so the whole ladder is available to
    kernel assembly and trajectory sampling at once.
    """
    n = step.n_levels
    out = np.empty((t_max + 1, n, n))
    out[0] = np.eye(n)
    for t in range(1, t_max + 1):
        out[t] = out[t - 1] @ step.matrix
    return out


def _transient_blocks(step, grid):
    """Sub-matrix over levels above the resting level and the one-step
    absorption column into the resting level and below."""
    start = grid.star_index + 1
    m = step.matrix
    q_block = m[start:, start:]
    absorb = m[start:, : start].sum(axis=1)
    return q_block, absorb


def mean_first_passage(step, grid, cog_index):
    """Exact mean first-passage time from ``cog_index`` down to the resting
    level, via the standard linear system (I - Q) m = 1 over the transient
    block."""
    if cog_index <= grid.star_index:
        raise InadmissibleRestError(
            "first-passage time is defined only from above the resting level"
        )
    q_block, _ = _transient_blocks(step, grid)
    k = q_block.shape[0]
    means = solve(np.eye(k) - q_block, np.ones(k))
    return float(means[cog_index - (grid.star_index + 1)])


def fpt_pmf(step, grid, cog_index, t_cap):
    """PMF of the first-passage time from ``cog_index`` to the resting level.

    The levels at and below the resting level are made absorbing; the
    probability of first absorption at step k is e' Q^(k-1) r over the
    transient block Q with one-step absorption vector r.

    Parameters
    ----------
    step : StepMatrix
        Step matrix of the resting action.
    grid : CogGrid
    cog_index : int
        Starting level, strictly above the resting level.
    t_cap : int
        Truncation point; the PMF is renormalized on {1..t_cap}.

    Returns
    -------
    probs : ndarray, shape (t_cap,)
        Renormalized first-passage probabilities for k = 1..t_cap.
    tail_mass : float
        Probability mass beyond t_cap before renormalization.

    Raises
    ------
    TailMassError
        If the pre-renormalization tail mass exceeds 1e-6.
    """
    if cog_index <= grid.star_index:
        raise InadmissibleRestError(
            "rest is only admissible strictly above the resting level"
        )
    if t_cap < 1:
        raise ValueError("t_cap must be at least 1")
    q_block, absorb = _transient_blocks(step, grid)
    k = q_block.shape[0]
    alpha = np.zeros(k)
    alpha[cog_index - (grid.star_index + 1)] = 1.0
    probs = np.empty(t_cap)
    for t in range(t_cap):
        probs[t] = alpha @ absorb
        alpha = alpha @ q_block
    tail = float(alpha.sum())
    if tail > FPT_TAIL_TOL:
        raise TailMassError(
            f"first-passage tail mass {tail:.3e} beyond t_cap={t_cap} "
            f"exceeds {FPT_TAIL_TOL:.0e}; raise t_cap or speed up the "
            "resting drift"
        )
    total = probs.sum()
    if total <= 0:
        raise TailMassError("first-passage mass vanished inside the cap")
    return probs / total, tail


def default_t_cap(step, grid, cog_index, factor=50):
    """Default truncation point: ``factor`` times the untruncated mean."""
    mean = mean_first_passage(step, grid, cog_index)
    return max(1, int(np.ceil(factor * mean)))
