"""Assembly of the queueing decision process.

A state is (q, cog): queue length 0..L and cognitive level index on the
grid. Every admissible action induces a sojourn-time distribution, a
cognitive transition over that sojourn and a Poisson queue update, which
together form the discounted semi-Markov kernel the solver consumes.
"""

import warnings
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .actions import ACTIONS, DECREMENT, Action
from .cogchain import build_step_matrix, step_powers
from .errors import InadmissibleRestError
from .sojourn import rest_pmf, service_pmf, skip_pmf, wait_pmf

State = namedtuple("State", ["q", "cog"])

KERNEL_MASS_TOL = 1e-10


@dataclass(frozen=True)
class ModelParams:
    """Everything needed to assemble the decision process."""

    queue_capacity: int
    grid: object
    rates: object
    service: object
    skip_wait: object
    holding_cost: float
    reward_normal: float
    reward_high: float
    discount: float
    rest_cap_factor: int = 50

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise ValueError("queue capacity must be at least 1")
        if self.holding_cost <= 0:
            raise ValueError("holding cost must be positive")
        if not self.reward_high > self.reward_normal >= 0:
            raise ValueError("rewards must satisfy high > normal >= 0")
        if not 0 < self.discount < 1:
            raise ValueError("discount factor must lie in (0,1)")
        if self.rest_cap_factor < 1:
            raise ValueError("rest cap factor must be at least 1")


def admissible(q, cog_index, grid):
    """Admissible actions in state (q, cog).

    An empty queue forces WAIT; otherwise REST joins the queue actions only
    strictly above the resting level.
    """
    if q == 0:
        return (Action.WAIT,)
    if cog_index > grid.star_index:
        return (Action.SKIP, Action.REST, Action.NORMAL, Action.HIGH)
    return (Action.SKIP, Action.NORMAL, Action.HIGH)


def queue_arrival_row(start, tau, rate, capacity):
    """Distribution of the next queue length from ``start`` pending tasks
    after ``tau`` time units of Poisson(rate) arrivals; overflow mass is
    lumped at the capacity."""
    out = np.zeros(capacity + 1)
    lam = rate * tau
    room = capacity - start
    w = np.arange(room + 1)
    out[start : capacity + 1] = stats.poisson.pmf(w, lam)
    out[capacity] += stats.poisson.sf(room, lam)
    return out


def queue_kernel(q, tau, action, rate, capacity):
    """Next-queue distribution for one action: the head task is consumed by
    SKIP/NORMAL/HIGH before arrivals are added, and the result is clamped
    to [0, capacity]."""
    start = max(q - DECREMENT[action], 0)
    return queue_arrival_row(start, tau, rate, capacity)


class Kernel:
    """Factored joint kernel P(q', cog', tau | q, cog, a).

    The sojourn law depends on (cog, a), the cognitive move on (a, tau) and
    the queue move on (q, tau, decrement), so the kernel is stored as those
    three factors plus the per-(cog, a) sojourn tables.
    """

    def __init__(self, model):
        self._m = model
        self._q_rows = {}

    def _queue_row(self, q, tau, action):
        # the row depends on (q, action) only through the post-service
        # queue length, so repeated expansions share one cached array;
        # callers treat the rows as read-only
        start = max(q - DECREMENT[action], 0)
        key = (start, tau)
        row = self._q_rows.get(key)
        if row is None:
            rate = self._m.params.skip_wait.arrival_rate
            row = queue_arrival_row(start, tau, rate, self._m.n_q - 1)
            self._q_rows[key] = row
        return row

    def entries(self, q, cog_index, action):
        """Yield (tau, p_tau, cog_dist, q_dist) triples with joint weight
        p_tau * cog_dist[c'] * q_dist[q']."""
        m = self._m
        if action not in admissible(q, cog_index, m.grid):
            raise ValueError(f"action {action} not admissible in ({q},{cog_index})")
        pmf = m.sojourn(cog_index, action)
        for tau, p_tau in zip(pmf.times, pmf.probs):
            if p_tau == 0.0:
                continue
            cog_dist = m.cog_move(action, int(tau), cog_index)
            q_dist = self._queue_row(q, int(tau), action)
            yield int(tau), float(p_tau), cog_dist, q_dist

    def mass(self, q, cog_index, action):
        total = 0.0
        for _, p_tau, cog_dist, q_dist in self.entries(q, cog_index, action):
            total += p_tau * cog_dist.sum() * q_dist.sum()
        return total


class SmdpModel:
    """Assembled immutable model: distributions, moment tables, rewards,
    admissibility masks and the dense discounted transition operators."""

    def __init__(self, params):
        self.params = params
        self.grid = params.grid
        self.n_q = params.queue_capacity + 1
        self.n_cog = self.grid.n_levels
        self.n_states = self.n_q * self.n_cog

        self.steps = {a: build_step_matrix(self.grid, params.rates, a) for a in ACTIONS}
        self._sojourns = self._build_sojourns()
        self._moments = self._build_moment_tables()
        self._powers = self._build_powers()
        self.reward_slope, self.reward_intercept = self._build_reward_components()
        self.admissible_mask = self._build_masks()
        self.kernel = Kernel(self)
        self.operators = self._build_operators()

        self.moment_ordering_violations = self._check_moment_ordering()
        self.shape_warnings = self._check_variance_shape()
        if self.moment_ordering_violations:
            warnings.warn(
                f"{len(self.moment_ordering_violations)} sojourn moment-ordering "
                "violations (skip < rest < normal < high); structural "
                "guarantees relying on the ordering may not apply",
                stacklevel=2,
            )
        if not params.skip_wait.stable:
            warnings.warn(
                "skip_time >= 1/arrival_rate: the queue is unstable even "
                "under constant skipping",
                stacklevel=2,
            )

    # -- assembly ---------------------------------------------------------

    def _build_sojourns(self):
        grid, params = self.grid, self.params
        rest_step = self.steps[Action.REST]
        table = {}
        for cog in range(self.n_cog):
            table[(cog, Action.SKIP)] = skip_pmf(params.skip_wait)
            table[(cog, Action.WAIT)] = wait_pmf(params.skip_wait)
            for a in (Action.NORMAL, Action.HIGH):
                table[(cog, a)] = service_pmf(params.service, grid, cog, a)
            if cog > grid.star_index:
                table[(cog, Action.REST)] = rest_pmf(
                    rest_step, grid, cog, cap_factor=params.rest_cap_factor
                )
        return table

    def _build_moment_tables(self):
        mu1 = {a: np.full(self.n_cog, np.nan) for a in ACTIONS}
        mu2 = {a: np.full(self.n_cog, np.nan) for a in ACTIONS}
        transform = {a: np.full(self.n_cog, np.nan) for a in ACTIONS}
        for (cog, a), pmf in self._sojourns.items():
            mu1[a][cog] = pmf.mean
            mu2[a][cog] = pmf.second_moment
            transform[a][cog] = pmf.discount_transform(self.params.discount)
        return {"mu1": mu1, "mu2": mu2, "transform": transform}

    def _build_powers(self):
        powers = {}
        for a in (Action.WAIT, Action.NORMAL, Action.HIGH):
            t_max = 0
            for cog in range(self.n_cog):
                pmf = self._sojourns.get((cog, a))
                if pmf is not None:
                    t_max = max(t_max, int(pmf.times[-1]))
            powers[a] = step_powers(self.steps[a], t_max)
        return powers

    def _build_reward_components(self):
        c = self.params.holding_cost
        lam = self.params.skip_wait.arrival_rate
        base = {
            Action.NORMAL: self.params.reward_normal,
            Action.HIGH: self.params.reward_high,
        }
        slope, intercept = {}, {}
        for a in ACTIONS:
            slope[a] = c * self._moments["mu1"][a]
            intercept[a] = base.get(a, 0.0) - 0.5 * c * lam * self._moments["mu2"][a]
        return slope, intercept

    def _build_masks(self):
        masks = {a: np.zeros((self.n_q, self.n_cog), dtype=bool) for a in ACTIONS}
        for q in range(self.n_q):
            for cog in range(self.n_cog):
                for a in admissible(q, cog, self.grid):
                    masks[a][q, cog] = True
        return masks

    def _queue_bases(self, taus):
        """start-indexed arrival matrices for every needed sojourn length."""
        rate = self.params.skip_wait.arrival_rate
        cap = self.n_q - 1
        bases = {}
        for tau in taus:
            rows = np.empty((self.n_q, self.n_q))
            for start in range(self.n_q):
                rows[start] = queue_arrival_row(start, int(tau), rate, cap)
            bases[int(tau)] = rows
        return bases

    def _build_operators(self):
        """Dense discounted operators T_a with
        (T_a V)[q,cog] = sum_{tau,c',q'} gamma^tau P(tau|cog,a)
        C_a_tau[cog,c'] B_tau[q,q'] V[q',c']."""
        gamma = self.params.discount
        all_taus = set()
        for pmf in self._sojourns.values():
            all_taus.update(int(t) for t, p in zip(pmf.times, pmf.probs) if p > 0)
        bases = self._queue_bases(sorted(all_taus))
        self._queue_base = bases

        shift0 = np.arange(self.n_q)
        shift1 = np.maximum(shift0 - 1, 0)
        ops = {}
        for a in ACTIONS:
            rows = shift1 if DECREMENT[a] else shift0
            op = np.zeros((self.n_q, self.n_cog, self.n_q, self.n_cog))
            for cog in range(self.n_cog):
                pmf = self._sojourns.get((cog, a))
                if pmf is None:
                    continue
                for tau, p_tau in zip(pmf.times, pmf.probs):
                    if p_tau == 0.0:
                        continue
                    tau = int(tau)
                    w = (gamma**tau) * p_tau
                    cog_dist = self.cog_move(a, tau, cog)
                    queue_rows = bases[tau][rows, :]
                    op[:, cog] += w * queue_rows[:, :, None] * cog_dist[None, None, :]
            ops[a] = op.reshape(self.n_states, self.n_states)
        return ops

    # -- accessors --------------------------------------------------------

    def sojourn(self, cog_index, action):
        pmf = self._sojourns.get((cog_index, action))
        if pmf is None:
            raise InadmissibleRestError(
                "rest has no sojourn distribution at or below the resting level"
            )
        return pmf

    def cog_move(self, action, tau, cog_index):
        """Distribution of the cognitive level after one epoch of ``action``
        lasting ``tau`` steps."""
        if action is Action.SKIP:
            out = np.zeros(self.n_cog)
            out[cog_index] = 1.0
            return out
        if action is Action.REST:
            out = np.zeros(self.n_cog)
            out[self.grid.star_index] = 1.0
            return out
        return self._powers[action][tau, cog_index].copy()

    def moment(self, name, action):
        return self._moments[name][action]

    def immediate_reward(self, q, cog_index, action):
        """Expected one-epoch reward r(a) - c E[tau] q - (c lambda / 2) E[tau^2]."""
        return float(
            self.reward_intercept[action][cog_index]
            - self.reward_slope[action][cog_index] * q
        )

    def reward_table(self, action):
        """(n_q, n_cog) table of immediate expected rewards; NaN where the
        action has no sojourn law."""
        q = np.arange(self.n_q)[:, None]
        return self.reward_intercept[action][None, :] - self.reward_slope[action][None, :] * q

    def epoch_reward(self, q, arrivals, tau, action):
        """Realized (undiscounted) reward of one epoch; its expectation over
        (tau, arrivals) equals ``immediate_reward`` exactly."""
        base = {Action.NORMAL: self.params.reward_normal, Action.HIGH: self.params.reward_high}
        r = base.get(action, 0.0)
        c = self.params.holding_cost
        return r - c * tau * (q + 0.5 * arrivals)

    @property
    def max_discount_transform(self):
        """sup over states and actions of E[gamma^tau]; the solver's
        contraction modulus."""
        best = 0.0
        for a in ACTIONS:
            tr = self._moments["transform"][a]
            finite = tr[np.isfinite(tr)]
            if finite.size:
                best = max(best, float(finite.max()))
        return best

    def states(self):
        for q in range(self.n_q):
            for cog in range(self.n_cog):
                yield State(q, cog)

    # -- validation reports ----------------------------------------------

    def _check_moment_ordering(self):
        """Strict sojourn moment ordering skip < rest < normal < high in
        both the mean and the second moment, per admissible level."""
        violations = []
        for name in ("mu1", "mu2"):
            tab = self._moments[name]
            for cog in range(self.n_cog):
                chain = [Action.SKIP]
                if cog > self.grid.star_index:
                    chain.append(Action.REST)
                chain += [Action.NORMAL, Action.HIGH]
                for lo, hi in zip(chain, chain[1:]):
                    a, b = tab[lo][cog], tab[hi][cog]
                    if not a < b:
                        violations.append(
                            {
                                "moment": name,
                                "cog_index": cog,
                                "pair": (str(lo), str(hi)),
                                "values": (float(a), float(b)),
                            }
                        )
        return violations

    def _check_variance_shape(self):
        """Service variance should dip at the resting level."""
        notes = []
        star = self.grid.star_index
        for a in (Action.NORMAL, Action.HIGH):
            var = self._moments["mu2"][a] - self._moments["mu1"][a] ** 2
            if int(np.argmin(var)) != star:
                notes.append(
                    f"service variance for {a} attains its minimum at level "
                    f"{int(np.argmin(var))} instead of the resting level {star}"
                )
            diffs = np.diff(var)
            if not (np.all(diffs[:star] <= 1e-12) and np.all(diffs[star:] >= -1e-12)):
                notes.append(f"service variance for {a} is not unimodal in cog")
        return notes


def build_model(params):
    """Assemble the decision process from validated parameters."""
    return SmdpModel(params)
