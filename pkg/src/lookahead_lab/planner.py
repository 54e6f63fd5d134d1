"""Optimal and fixed adaptive-batching planning, ABP evaluation, and the
augmented-MDP brute-force oracle."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    EnumerationInfeasible,
    OracleInfeasible,
    check_batch,
    check_int,
    check_state,
    check_value_vector,
)
from .lookahead import (
    LookaheadInfo,
    SummaryLaw,
    exact_summary_law,
    extract_lookahead,
    extract_policy,
    plan_windows,
    rollout,
    sampled_summary_law,
)
from .mdp import EpisodeRealization, TabularMDP
from .rng import lookahead_rng


@dataclass
class ExpectationConfig:
    """How expectations over fresh lookahead are computed.

    Exact enumeration is used whenever it stays within ``cap`` joint outcomes;
    otherwise ``n_samples`` Monte-Carlo lookaheads are drawn from a stream
    keyed by ``(seed, h, s, B)``.
    """

    cap: int = 10_000
    n_samples: int = 10_000
    seed: int = 0
    tol: float = 1e-9

    def __post_init__(self):
        check_int(self.cap, "cap", low=1)
        check_int(self.n_samples, "n_samples", low=1)
        check_int(self.seed, "seed", low=0)


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Values ``V[h-1, s]`` for steps ``h = 1..H+1``; the last row is zero."""

    V: np.ndarray

    @property
    def H(self) -> int:
        return self.V.shape[0] - 1

    @property
    def S(self) -> int:
        return self.V.shape[1]

    def __getitem__(self, h: int) -> np.ndarray:
        return self.V[h - 1]

    def to_list(self) -> list[list[float]]:
        return self.V.tolist()


@dataclass(frozen=True, eq=False)
class ABPPolicy:
    """Batching horizons ``B[h-1, s]`` plus the values used to plan inside batches.

    The in-batch plan is not stored: at a batch start ``(h, s)`` with range
    ``B`` it is recomputed with ``extract_policy`` against ``value[h + B]``.
    """

    B: np.ndarray
    value: ValueTable
    label: str = "optimal"
    q: np.ndarray | None = None

    def batch(self, h: int, s: int) -> int:
        return int(self.B[h - 1, s])

    def to_dict(self) -> dict:
        return {"V": self.value.to_list(), "B": self.B.tolist(), "label": self.label}


class QMoments(NamedTuple):
    mean: float
    variance: float
    exact: bool


class LookaheadLaws:
    """Cache of summary laws per batch start ``(h, s, B)`` for one MDP."""

    def __init__(self, mdp: TabularMDP, cfg: ExpectationConfig | None = None):
        self.mdp = mdp
        self.cfg = cfg or ExpectationConfig()
        self._cache: dict[tuple[int, int, int], SummaryLaw] = {}

    def __call__(self, h: int, s: int, B: int) -> SummaryLaw:
        key = (h, s, B)
        law = self._cache.get(key)
        if law is None:
            try:
                law = exact_summary_law(self.mdp, h, s, B, cap=self.cfg.cap)
            except EnumerationInfeasible:
                rng = lookahead_rng(self.cfg.seed, h, s, B)
                law = sampled_summary_law(self.mdp, h, s, B, self.cfg.n_samples, rng)
            self._cache[key] = law
        return law

    @property
    def all_exact(self) -> bool:
        return all(law.exact for law in self._cache.values())


def _laws(mdp, cfg, laws) -> LookaheadLaws:
    if laws is not None:
        if laws.mdp is not mdp:
            raise ValueError("law cache belongs to a different MDP")
        return laws
    return LookaheadLaws(mdp, cfg)


def expected_q_star(mdp: TabularMDP, h: int, s: int, B: int, V_next, cfg: ExpectationConfig | None = None,
                    laws: LookaheadLaws | None = None) -> QMoments:
    """Mean and population variance of ``q_star`` under fresh ``B``-step lookahead."""
    B = check_batch(mdp, h, B)
    s = check_state(mdp, s)
    V_next = check_value_vector(mdp, V_next, "V_next")
    law = _laws(mdp, cfg, laws)(h, s, B)
    mean, var = law.moments(V_next)
    return QMoments(mean, var, law.exact)


def plan_optimal_abp(mdp: TabularMDP, cfg: ExpectationConfig | None = None,
                     laws: LookaheadLaws | None = None) -> ABPPolicy:
    """Backward induction over batch starts, maximizing over the batch range.

    Ties between ranges go to the smallest ``B``.
    """
    laws = _laws(mdp, cfg, laws)
    S, H, ell = mdp.S, mdp.H, mdp.ell
    V = np.zeros((H + 1, S))
    Bt = np.zeros((H, S), dtype=np.int64)
    Q = np.full((H, S, ell), np.nan)
    for h in range(H, 0, -1):
        for s in range(S):
            for B in range(1, mdp.effective_lookahead(h) + 1):
                Q[h - 1, s, B - 1] = laws(h, s, B).moments(V[h - 1 + B])[0]
            b = int(np.nanargmax(Q[h - 1, s]))
            Bt[h - 1, s] = b + 1
            V[h - 1, s] = Q[h - 1, s, b]
    return ABPPolicy(Bt, ValueTable(V), "optimal", Q)


def evaluate_abp(mdp: TabularMDP, policy: ABPPolicy, cfg: ExpectationConfig | None = None,
                 laws: LookaheadLaws | None = None) -> ValueTable:
    """Value of an ABP: its own ranges, in-batch plans greedy w.r.t. ``policy.value``."""
    laws = _laws(mdp, cfg, laws)
    S, H = mdp.S, mdp.H
    Bt = np.asarray(policy.B)
    if Bt.shape != (H, S):
        raise ValueError(f"policy ranges must have shape ({H}, {S}), got {Bt.shape}")
    plan_V = policy.value.V
    V = np.zeros((H + 1, S))
    for h in range(H, 0, -1):
        for s in range(S):
            B = check_batch(mdp, h, int(Bt[h - 1, s]))
            law = laws(h, s, B)
            ends = law.planned_ends(plan_V[h - 1 + B])
            samples = law.best[np.arange(len(ends)), ends] + V[h - 1 + B][ends]
            V[h - 1, s] = float(np.dot(law.probs, samples))
    return ValueTable(V)


def constant_schedule(H: int, ell: int, B: int) -> list[int]:
    """Consecutive batches of length ``B``; the last one is truncated at ``H``."""
    B = check_int(B, "B", low=1, high=ell)
    out, t = [], 1
    while t <= H:
        out.append(min(B, H - t + 1))
        t += out[-1]
    return out


def check_schedule(mdp: TabularMDP, schedule: Sequence[int]) -> list[int]:
    schedule = [check_int(b, "batch length", low=1) for b in schedule]
    t = 1
    for b in schedule:
        if t > mdp.H:
            raise ValueError("schedule extends past the horizon")
        if b > mdp.effective_lookahead(t):
            raise ValueError(f"batch of length {b} starting at step {t} exceeds the effective lookahead")
        t += b
    if t != mdp.H + 1:
        raise ValueError(f"schedule covers {t - 1} steps, expected {mdp.H}")
    return schedule


def plan_fixed_batching(mdp: TabularMDP, schedule: Sequence[int], cfg: ExpectationConfig | None = None,
                        laws: LookaheadLaws | None = None) -> tuple[ABPPolicy, ValueTable]:
    """Optimal play when batches follow a state-independent schedule.

    At steps inside a scheduled batch the returned ranges are the remaining
    length of that batch, so that restarting there resumes the schedule.
    """
    schedule = check_schedule(mdp, schedule)
    laws = _laws(mdp, cfg, laws)
    S, H = mdp.S, mdp.H
    remaining = np.zeros(H, dtype=np.int64)
    t = 1
    for b in schedule:
        for i in range(b):
            remaining[t - 1 + i] = b - i
        t += b
    V = np.zeros((H + 1, S))
    Bt = np.zeros((H, S), dtype=np.int64)
    for h in range(H, 0, -1):
        B = int(remaining[h - 1])
        Bt[h - 1] = B
        for s in range(S):
            V[h - 1, s] = laws(h, s, B).moments(V[h - 1 + B])[0]
    values = ValueTable(V)
    return ABPPolicy(Bt, values, "fixed"), values


# --- acting ------------------------------------------------------------------


@dataclass
class EpisodeTrace:
    """One played episode: ``states[h-1]`` is the state at step ``h`` (``H + 1`` entries)."""

    states: list[int]
    actions: list[int]
    rewards: list[float]
    batches: list[tuple[int, int, int]]

    @property
    def total(self) -> float:
        return float(sum(self.rewards))


def play_batches(mdp: TabularMDP, choose, plan_values, real: EpisodeRealization, s1: int = 0,
                 observe=None) -> EpisodeTrace:
    """Play one episode batch by batch on a fixed realization.

    ``choose(h, s)`` returns the range of the batch starting at ``(h, s)``;
    the in-batch plan is greedy against ``plan_values[h - 1 + B]`` (rows
    indexed like :class:`ValueTable`). ``observe(info)`` sees every revealed
    lookahead before it is acted upon.
    """
    plan_values = np.asarray(plan_values, dtype=float)
    s = check_state(mdp, s1, "s1")
    trace = EpisodeTrace([s], [], [], [])
    h = 1
    while h <= mdp.H:
        B = check_batch(mdp, h, choose(h, s))
        info: LookaheadInfo = extract_lookahead(mdp, real, h, s, B)
        if observe is not None:
            observe(info)
        actions = extract_policy(info, plan_values[h - 1 + B])
        rewards, states = rollout(info, actions)
        trace.batches.append((h, s, B))
        trace.actions.extend(actions)
        trace.rewards.extend(rewards)
        trace.states.extend(states[1:])
        s = states[-1]
        h += B
    return trace


def run_abp_episode(mdp: TabularMDP, policy: ABPPolicy, real: EpisodeRealization, s1: int = 0) -> EpisodeTrace:
    return play_batches(mdp, policy.batch, policy.value.V, real, s1)


def abp_returns(mdp: TabularMDP, policy: ABPPolicy, R: np.ndarray, N: np.ndarray, s1: int = 0) -> np.ndarray:
    """Returns of ``policy`` on many realizations ``R, N`` of shape ``(n, H, S, A)``.

    Same decisions as :func:`run_abp_episode`, vectorized over episodes.
    """
    n = R.shape[0]
    s = np.full(n, check_state(mdp, s1, "s1"), dtype=np.int64)
    start = np.ones(n, dtype=np.int64)
    total = np.zeros(n)
    for h in range(1, mdp.H + 1):
        at = np.flatnonzero(start == h)
        if not len(at):
            continue
        ranges = policy.B[h - 1, s[at]]
        for B in np.unique(ranges):
            B = check_batch(mdp, h, int(B))
            idx = at[ranges == B]
            _, rewards, states = plan_windows(R[idx, h - 1:h - 1 + B], N[idx, h - 1:h - 1 + B], s[idx],
                                              policy.value[h + B])
            for b in range(B):
                total[idx] += rewards[:, b]
            s[idx] = states[:, B]
            start[idx] = h + B
    return total


# --- augmented-MDP oracle ----------------------------------------------------


def _joint_scenarios(law, S: int, A: int):
    """Every joint outcome of a step: ``(weight, rewards[S][A], nexts[S][A])``."""
    out = []
    for combo in itertools.product(*(range(g.n_outcomes) for g in law.groups)):
        w = 1.0
        R = [[0.0] * A for _ in range(S)]
        N = [[0] * A for _ in range(S)]
        for g, k in zip(law.groups, combo):
            w *= float(g.weights[k])
            for i, (s, a) in enumerate(g.cells):
                R[s][a] = float(g.rewards[k, i])
                N[s][a] = int(g.nexts[k, i])
        out.append((w, R, N))
    return out


def solve_augmented_oracle(mdp: TabularMDP, cap: int = 200_000) -> ValueTable:
    """Optimal batch-start values by brute force on the augmented MDP.

    The augmented state at a batch start is ``(s, h)``; choosing a range
    reveals one full joint realization of the next ``B`` steps, after which
    the agent moves through ``(s, realization, h, steps left)`` states with
    plain per-step maximization. Intended for tiny instances only.
    """
    S, A, H = mdp.S, mdp.A, mdp.H
    scen = [_joint_scenarios(law, S, A) for law in mdp.laws]
    work = 0
    for h in range(1, H + 1):
        for B in range(1, min(mdp.ell, H - h + 1) + 1):
            work += S * int(np.prod([len(scen[h - 1 + b]) for b in range(B)], dtype=object))
            if work > cap:
                raise OracleInfeasible(f"augmented MDP needs more than {cap} realization evaluations")

    V = [[0.0] * S for _ in range(H + 2)]  # V[h][s], 1-based; V[H+1] = 0
    memo: dict = {}

    def inside(t: int, s: int, rest: tuple, end: int) -> float:
        # t: current step, rest: scenario ids for steps t..end-1
        key = (t, s, rest)
        if key in memo:
            return memo[key]
        _, R, N = scen[t - 1][rest[0]]
        best = float("-inf")
        for a in range(A):
            nxt = N[s][a]
            cont = inside(t + 1, nxt, rest[1:], end) if len(rest) > 1 else V[end][nxt]
            best = max(best, R[s][a] + cont)
        memo[key] = best
        return best

    for h in range(H, 0, -1):
        for s in range(S):
            best = float("-inf")
            for B in range(1, min(mdp.ell, H - h + 1) + 1):
                total = 0.0
                for ids in itertools.product(*(range(len(scen[h - 1 + b])) for b in range(B))):
                    p = 1.0
                    for b, i in enumerate(ids):
                        p *= scen[h - 1 + b][i][0]
                    total += p * inside(h, s, ids, h + B)
                best = max(best, total)
            V[h][s] = best
    return ValueTable(np.array(V[1:], dtype=float))


# --- estimator front-ends ----------------------------------------------------


class ABPPlanner(BaseEstimator):
    """Estimator-style planner for adaptive batching policies.

    Parameters
    ----------
    schedule : None, int or sequence of int
        ``None`` plans the optimal ABP. An int plans fixed batching with that
        constant batch length; a sequence gives explicit batch lengths.
    cap, n_samples, seed : see :class:`ExpectationConfig`.

    Attributes
    ----------
    policy_ : ABPPolicy
    values_ : ValueTable
    exact_ : bool
        Whether every expectation was computed by exact enumeration.
    """

    def __init__(self, schedule=None, cap=10_000, n_samples=10_000, seed=0):
        self.schedule = schedule
        self.cap = cap
        self.n_samples = n_samples
        self.seed = seed

    def fit(self, mdp: TabularMDP, y=None):
        cfg = ExpectationConfig(cap=self.cap, n_samples=self.n_samples, seed=self.seed)
        laws = LookaheadLaws(mdp, cfg)
        if self.schedule is None:
            self.policy_ = plan_optimal_abp(mdp, laws=laws)
            self.values_ = self.policy_.value
        else:
            schedule = self.schedule
            if isinstance(schedule, (int, np.integer)):
                schedule = constant_schedule(mdp.H, mdp.ell, int(schedule))
            self.policy_, self.values_ = plan_fixed_batching(mdp, schedule, laws=laws)
        self.exact_ = laws.all_exact
        self.mdp_ = mdp
        return self

    def predict(self, states, h: int = 1) -> np.ndarray:
        """Batching horizon chosen when a batch starts at step ``h`` in each state."""
        check_is_fitted(self, "policy_")
        return self.policy_.B[h - 1, np.asarray(states, dtype=np.int64)]

    def value(self, states, h: int = 1) -> np.ndarray:
        check_is_fitted(self, "values_")
        return self.values_[h][np.asarray(states, dtype=np.int64)]

    def evaluate(self, policy: ABPPolicy) -> ValueTable:
        """Value of another ABP on the fitted MDP, using the same expectation settings."""
        check_is_fitted(self, "mdp_")
        cfg = ExpectationConfig(cap=self.cap, n_samples=self.n_samples, seed=self.seed)
        return evaluate_abp(self.mdp_, policy, cfg)
