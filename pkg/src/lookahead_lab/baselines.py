"""Comparison agents: receding-horizon MPC, fixed-schedule batching (via the
planner) and the no-lookahead optimal Markov policy, plus episode evaluation."""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import check_int, check_state
from .lookahead import extract_lookahead, extract_policy, plan_windows
from .mdp import EpisodeRealization, TabularMDP, episode_tables, n_uniforms, sample_episode
from .planner import ABPPolicy, EpisodeTrace, ValueTable, abp_returns, run_abp_episode
from .rng import episode_rng, episode_uniforms

VALUE_TOL = 1e-12


def markov_optimal(mdp: TabularMDP) -> tuple[np.ndarray, ValueTable]:
    """No-lookahead finite-horizon optimum on the marginal law; ties go to the smallest action."""
    r, P = mdp.marginals
    H, S = mdp.H, mdp.S
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    for h in range(H, 0, -1):
        Q = r[h - 1] + P[h - 1] @ V[h]
        pi[h - 1] = np.argmax(Q, axis=1)
        V[h - 1] = Q[np.arange(S), pi[h - 1]]
    return pi, ValueTable(V)


def mpc_backward_values(mdp: TabularMDP) -> ValueTable:
    """Default MPC terminal values: the no-lookahead Bellman optimality backup."""
    return markov_optimal(mdp)[1]


def _check_value_table(values: ValueTable, H: int | None = None) -> None:
    V = np.asarray(values.V, dtype=float)
    if H is not None and V.shape[0] != H + 1:
        raise ValueError(f"value table has {V.shape[0]} rows, expected {H + 1}")
    caps = (V.shape[0] - np.arange(1, V.shape[0] + 1))[:, None]
    if not np.all(np.isfinite(V)) or np.any(V < -VALUE_TOL) or np.any(V > caps + VALUE_TOL):
        raise ValueError("values must satisfy 0 <= V[h][s] <= H - h + 1")


# --- agents -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MPCAgent:
    """Replans every step over the full window against fixed terminal values.

    At step ``h`` it solves the window of ``ell_h`` steps greedily against
    ``values[h + ell_h]`` and plays only the first planned action.
    """

    values: ValueTable
    scheme: str = "user-supplied"

    def __post_init__(self):
        _check_value_table(self.values)

    @classmethod
    def default(cls, mdp: TabularMDP) -> "MPCAgent":
        return cls(mpc_backward_values(mdp), "default-bellman")

    def run(self, mdp: TabularMDP, real: EpisodeRealization, s1: int = 0) -> EpisodeTrace:
        return run_mpc_episode(mdp, self, real, s1)

    def run_many(self, mdp: TabularMDP, R: np.ndarray, N: np.ndarray, s1: int = 0) -> np.ndarray:
        """Returns on realizations ``R, N`` of shape ``(n, H, S, A)``."""
        n = R.shape[0]
        s = np.full(n, check_state(mdp, s1, "s1"), dtype=np.int64)
        total = np.zeros(n)
        for h in range(1, mdp.H + 1):
            L = mdp.effective_lookahead(h)
            actions, rewards, _ = plan_windows(R[:, h - 1:h - 1 + L], N[:, h - 1:h - 1 + L], s, self.values[h + L])
            total += rewards[:, 0]
            s = N[np.arange(n), h - 1, s, actions[:, 0]]
        return total


def run_mpc_episode(mdp: TabularMDP, agent: MPCAgent, real: EpisodeRealization, s1: int = 0) -> EpisodeTrace:
    """One MPC episode; every window is a view of the same realization."""
    if agent.values.H != mdp.H or agent.values.S != mdp.S:
        raise ValueError("agent values do not match the MDP dimensions")
    s = check_state(mdp, s1, "s1")
    trace = EpisodeTrace([s], [], [], [])
    for h in range(1, mdp.H + 1):
        L = mdp.effective_lookahead(h)
        info = extract_lookahead(mdp, real, h, s, L)
        a = extract_policy(info, agent.values[h + L])[0]
        trace.batches.append((h, s, L))
        trace.actions.append(a)
        trace.rewards.append(float(real.rewards[h - 1, s, a]))
        s = int(real.nexts[h - 1, s, a])
        trace.states.append(s)
    return trace


@dataclass(frozen=True, eq=False)
class ABPAgent:
    """Plays an ABP; in-batch plans come from the policy's attached values."""

    policy: ABPPolicy

    def run(self, mdp: TabularMDP, real: EpisodeRealization, s1: int = 0) -> EpisodeTrace:
        return run_abp_episode(mdp, self.policy, real, s1)

    def run_many(self, mdp: TabularMDP, R: np.ndarray, N: np.ndarray, s1: int = 0) -> np.ndarray:
        return abp_returns(mdp, self.policy, R, N, s1)


@dataclass(frozen=True, eq=False)
class MarkovAgent:
    """Ignores lookahead and follows a deterministic Markov policy ``pi[h-1, s]``."""

    pi: np.ndarray

    @classmethod
    def optimal(cls, mdp: TabularMDP) -> "MarkovAgent":
        return cls(markov_optimal(mdp)[0])

    def run(self, mdp: TabularMDP, real: EpisodeRealization, s1: int = 0) -> EpisodeTrace:
        s = check_state(mdp, s1, "s1")
        trace = EpisodeTrace([s], [], [], [])
        for h in range(1, mdp.H + 1):
            a = int(self.pi[h - 1, s])
            trace.batches.append((h, s, 0))
            trace.actions.append(a)
            trace.rewards.append(float(real.rewards[h - 1, s, a]))
            s = int(real.nexts[h - 1, s, a])
            trace.states.append(s)
        return trace

    def run_many(self, mdp: TabularMDP, R: np.ndarray, N: np.ndarray, s1: int = 0) -> np.ndarray:
        n = R.shape[0]
        rows = np.arange(n)
        s = np.full(n, check_state(mdp, s1, "s1"), dtype=np.int64)
        total = np.zeros(n)
        for h in range(1, mdp.H + 1):
            a = self.pi[h - 1, s]
            total += R[rows, h - 1, s, a]
            s = N[rows, h - 1, s, a]
        return total


# --- Assumption on semi-terminal states -----------------------------------------


@dataclass
class Assumption1Report:
    """Semi-terminal ``(h, s)`` pairs, their pass flags and failure witnesses.

    ``witnesses`` holds ``((h, s), (h, s'))`` pairs with identical reward law
    but values differing by more than the tolerance.
    """

    pairs: list[tuple[int, int]] = field(default_factory=list)
    passed: dict[tuple[int, int], bool] = field(default_factory=dict)
    witnesses: list[tuple[tuple[int, int], tuple[int, int]]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def __bool__(self) -> bool:
        return self.ok


def _groups_of_state(law, s: int):
    return [g for g in law.groups if any(c[0] == s for c in g.cells)]


def _reward_law_fingerprint(law, s: int, A: int) -> tuple:
    """Canonical joint law of ``(R(s, 0), ..., R(s, A-1))`` at one step."""
    groups = _groups_of_state(law, s)
    probs: dict[tuple, float] = defaultdict(float)
    for combo in itertools.product(*(range(g.n_outcomes) for g in groups)):
        r = [0.0] * A
        w = 1.0
        for g, k in zip(groups, combo):
            w *= float(g.weights[k])
            for i, (cs, ca) in enumerate(g.cells):
                if cs == s:
                    r[ca] = float(g.rewards[k, i])
        probs[tuple(round(x, 12) for x in r)] += w
    return tuple(sorted((key, round(p, 12)) for key, p in probs.items()))


def _terminal_is_silent(mdp: TabularMDP) -> bool:
    t = mdp.terminal
    if t is None:
        return False
    for law in mdp.laws:
        for g in _groups_of_state(law, t):
            for i, (cs, _) in enumerate(g.cells):
                if cs == t and (np.any(g.rewards[:, i] != 0) or np.any(g.nexts[:, i] != t)):
                    return False
    return True


def semi_terminal_pairs(mdp: TabularMDP) -> list[tuple[int, int]]:
    """All ``(h, s)`` from which every action surely ends the episode's rewards.

    At step ``H`` every state qualifies. Before that, a state qualifies when
    every action moves with certainty to the absorbing zero-reward terminal
    state (which itself is not listed).
    """
    silent = _terminal_is_silent(mdp)
    out = []
    for h in range(1, mdp.H + 1):
        law = mdp.law(h)
        for s in range(mdp.S):
            if h == mdp.H:
                out.append((h, s))
                continue
            if not silent or s == mdp.terminal:
                continue
            ok = True
            for g in _groups_of_state(law, s):
                for i, (cs, _) in enumerate(g.cells):
                    if cs == s and np.any(g.nexts[:, i] != mdp.terminal):
                        ok = False
            if ok:
                out.append((h, s))
    return out


def check_assumption1(mdp: TabularMDP, values: ValueTable, tol: float = VALUE_TOL) -> Assumption1Report:
    """Semi-terminal states sharing a step and a reward law must share a value."""
    pairs = semi_terminal_pairs(mdp)
    report = Assumption1Report(pairs=pairs)
    groups: dict[tuple, list[tuple[int, int]]] = defaultdict(list)
    for h, s in pairs:
        groups[(h, _reward_law_fingerprint(mdp.law(h), s, mdp.A))].append((h, s))
    for members in groups.values():
        ref = members[0]
        v0 = float(values[ref[0]][ref[1]])
        report.passed[ref] = True
        for hs in members[1:]:
            same = abs(float(values[hs[0]][hs[1]]) - v0) <= tol
            report.passed[hs] = same
            if not same:
                report.passed[ref] = False
                report.witnesses.append((ref, hs))
    report.passed = {hs: report.passed[hs] for hs in pairs}
    return report


# --- evaluation ---------------------------------------------------------------


class EvalResult(NamedTuple):
    mean: float
    stderr: float
    n: int
    exact: bool


def n_episode_realizations(mdp: TabularMDP) -> int:
    return int(np.prod([law.n_scenarios for law in mdp.laws], dtype=object))


def _all_realizations(mdp: TabularMDP):
    per_step = []
    for h in range(1, mdp.H + 1):
        law = mdp.law(h)
        opts = []
        for combo in itertools.product(*(range(g.n_outcomes) for g in law.groups)):
            w = math.prod(float(g.weights[k]) for g, k in zip(law.groups, combo))
            opts.append((w, combo))
        per_step.append(opts)
    for path in itertools.product(*per_step):
        yield math.prod(w for w, _ in path), EpisodeRealization.from_outcomes(mdp, [c for _, c in path])


def evaluate_agent(mdp: TabularMDP, agent, n_episodes: int = 10_000, rng: np.random.Generator | None = None,
                   seed: int = 0, s1: int = 0, cap: int = 10_000, chunk: int = 2048) -> EvalResult:
    """Mean return of ``agent.run`` from ``s1`` and its standard error.

    When the number of joint episode realizations is at most ``cap`` the
    expectation is computed exactly (standard error 0). Otherwise
    ``n_episodes`` realizations are drawn, from ``rng`` if given, else from
    the counter-based stream ``episode_rng(seed, k)``. Agents with a
    ``run_many`` method are simulated ``chunk`` episodes at a time on the same
    streams, with identical results.
    """
    n_episodes = check_int(n_episodes, "n_episodes", low=1)
    if n_episode_realizations(mdp) <= cap:
        total = 0.0
        for w, real in _all_realizations(mdp):
            total += w * agent.run(mdp, real, s1).total
        return EvalResult(total, 0.0, n_episode_realizations(mdp), True)
    returns = np.empty(n_episodes)
    if rng is None and hasattr(agent, "run_many"):
        width = n_uniforms(mdp)
        for lo in range(0, n_episodes, chunk):
            hi = min(lo + chunk, n_episodes)
            R, N = episode_tables(mdp, episode_uniforms(seed, lo + 1, hi - lo, width))
            returns[lo:hi] = agent.run_many(mdp, R, N, s1)
    else:
        for k in range(n_episodes):
            real = sample_episode(mdp, rng if rng is not None else episode_rng(seed, k + 1))
            returns[k] = agent.run(mdp, real, s1).total
    se = float(returns.std(ddof=1) / math.sqrt(n_episodes)) if n_episodes > 1 else 0.0
    return EvalResult(float(returns.mean()), se, n_episodes, False)
