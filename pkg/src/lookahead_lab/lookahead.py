"""Lookahead windows and the batch-local dynamic program.

A ``LookaheadInfo`` is the realized reward/next-state tensor of a ``B``-step
window starting at ``(h, s0)``, pruned so that only cells reachable from
``s0`` carry information. ``compute_summary`` reduces it to the best
in-batch reward for every reachable end state; together with a terminal
value vector that is all that matters for planning inside the batch.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ._validation import EnumerationInfeasible, check_batch, check_state
from .mdp import EMPTY, EpisodeRealization, TabularMDP

NEG_INF = float("-inf")


@dataclass(frozen=True, eq=False)
class LookaheadInfo:
    """Pruned lookahead of ``B`` steps from state ``s0`` at step ``h``.

    ``R[s, a, b]`` / ``NS[s, a, b]`` give the reward and next state of playing
    ``a`` in ``s`` at step ``h + b``. Unreachable cells hold ``0`` / ``EMPTY``.
    """

    h: int
    s0: int
    B: int
    R: np.ndarray
    NS: np.ndarray

    @property
    def S(self) -> int:
        return self.R.shape[0]

    @property
    def A(self) -> int:
        return self.R.shape[1]

    def to_dict(self) -> dict:
        return {"h": self.h, "s0": self.s0, "B": self.B, "R": self.R.tolist(), "NS": self.NS.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "LookaheadInfo":
        return cls(int(doc["h"]), int(doc["s0"]), int(doc["B"]),
                   np.asarray(doc["R"], dtype=float), np.asarray(doc["NS"], dtype=np.int64))


@dataclass(frozen=True, eq=False)
class BatchSummary:
    """Best in-batch reward per reachable end state (``-inf`` elsewhere)."""

    h: int
    s0: int
    B: int
    best: np.ndarray

    @property
    def reach(self) -> tuple[int, ...]:
        return tuple(int(s) for s in np.flatnonzero(self.best > NEG_INF))

    def best_map(self) -> dict[int, float]:
        return {s: float(self.best[s]) for s in self.reach}


def prune(R: np.ndarray, NS: np.ndarray, s0: int) -> None:
    """Blank out, in place, every cell not reachable from ``s0`` at its offset."""
    S, _, B = R.shape
    keep = np.zeros(S, dtype=bool)
    keep[s0] = True
    for b in range(B):
        drop = ~keep
        R[drop, :, b] = 0.0
        NS[drop, :, b] = EMPTY
        keep = np.zeros(S, dtype=bool)
        keep[NS[~drop, :, b].ravel()] = True


def extract_lookahead(mdp: TabularMDP, real: EpisodeRealization, h: int, s0: int, B: int) -> LookaheadInfo:
    B = check_batch(mdp, h, B)
    s0 = check_state(mdp, s0, "s0")
    R = np.ascontiguousarray(real.rewards[h - 1 : h - 1 + B].transpose(1, 2, 0))
    NS = np.ascontiguousarray(real.nexts[h - 1 : h - 1 + B].transpose(1, 2, 0))
    prune(R, NS, s0)
    return LookaheadInfo(h, s0, B, R, NS)


def _forward_layers(info: LookaheadInfo):
    """Forward DP layers plus the window as nested lists ``[b][s][a]``."""
    S, A, B = info.S, info.A, info.B
    R = info.R.transpose(2, 0, 1).tolist()
    NS = info.NS.transpose(2, 0, 1).tolist()
    J = [NEG_INF] * S
    J[info.s0] = 0.0
    layers = [J]
    for b in range(B):
        R_b, N_b = R[b], NS[b]
        new = [NEG_INF] * S
        for s in range(S):
            js = J[s]
            if js == NEG_INF:
                continue
            for a in range(A):
                t = N_b[s][a]
                if t == EMPTY:
                    raise ValueError(f"reachable cell ({s}, {a}) at offset {b} has no next state")
                v = js + R_b[s][a]
                if v > new[t]:
                    new[t] = v
        J = new
        layers.append(J)
    return layers, R, NS


def compute_summary(info: LookaheadInfo) -> BatchSummary:
    """Forward DP over the window: best reward to each end state."""
    best = np.array(_forward_layers(info)[0][-1], dtype=float)
    return BatchSummary(info.h, info.s0, info.B, best)


def q_star(summary: BatchSummary, V) -> float:
    """Best in-batch reward plus terminal value over reachable end states."""
    best = summary.best
    return max(float(best[s]) + float(V[s]) for s in np.flatnonzero(best > NEG_INF))


def _planned_end(final: list[float], V) -> int:
    end, top = -1, NEG_INF
    for s, j in enumerate(final):
        if j == NEG_INF:
            continue
        v = j + float(V[s])
        if v > top:
            end, top = s, v
    return end


def extract_policy(info: LookaheadInfo, V) -> tuple[int, ...]:
    """Action sequence attaining ``q_star`` on ``info``.

    The end state is the lowest-index maximizer; backtracking then picks, at
    every offset, the lowest ``(state, action)`` predecessor that realizes the
    best reward into the current state.
    """
    V = np.asarray(V, dtype=float)
    layers, R, NS = _forward_layers(info)
    target = _planned_end(layers[-1], V)
    actions = []
    for b in range(info.B - 1, -1, -1):
        J, goal = layers[b], layers[b + 1][target]
        found = None
        for s in range(info.S):
            if J[s] == NEG_INF:
                continue
            for a in range(info.A):
                if NS[b][s][a] == target and J[s] + R[b][s][a] == goal:
                    found = (s, a)
                    break
            if found:
                break
        assert found is not None, "backtracking lost the optimal path"
        target = found[0]
        actions.append(found[1])
    return tuple(reversed(actions))


def rollout(info: LookaheadInfo, actions) -> tuple[list[float], list[int]]:
    """Play ``actions`` on the window; return per-step rewards and visited states."""
    s = info.s0
    rewards, states = [], [s]
    for b, a in enumerate(actions):
        rewards.append(float(info.R[s, a, b]))
        s = int(info.NS[s, a, b])
        if s == EMPTY:
            raise ValueError(f"action sequence leaves the lookahead at offset {b}")
        states.append(s)
    return rewards, states


def plan_windows(R: np.ndarray, NS: np.ndarray, s0: np.ndarray, V) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized ``extract_policy`` + ``rollout`` over many windows at once.

    ``R`` and ``NS`` have shape ``(n, B, S, A)`` (unpruned slices of episode
    realizations), ``s0`` has shape ``(n,)`` and ``V`` is one terminal value
    vector. Tie-breaking is identical to the scalar path. Returns actions and
    rewards of shape ``(n, B)`` and visited states of shape ``(n, B + 1)``.
    """
    n, B, S, A = R.shape
    rows = np.arange(n)
    J = np.full((n, S), NEG_INF)
    J[rows, s0] = 0.0
    layers = [J]
    flat_rows = np.repeat(rows, S * A)
    for b in range(B):
        cand = (J[:, :, None] + R[:, b]).reshape(-1)
        new = np.full((n, S), NEG_INF)
        np.maximum.at(new, (flat_rows, NS[:, b].reshape(-1)), cand)
        J = new
        layers.append(J)
    target = np.argmax(J + np.asarray(V, dtype=float)[None, :], axis=1)
    actions = np.empty((n, B), dtype=np.int64)
    states = np.empty((n, B + 1), dtype=np.int64)
    states[:, B] = target
    for b in range(B - 1, -1, -1):
        Jb, goal = layers[b], layers[b + 1][rows, target]
        match = ((NS[:, b] == target[:, None, None])
                 & (Jb[:, :, None] + R[:, b] == goal[:, None, None])
                 & (Jb > NEG_INF)[:, :, None])
        first = np.argmax(match.reshape(n, S * A), axis=1)
        target = first // A
        actions[:, b] = first % A
        states[:, b] = target
    rewards = R[rows[:, None], np.arange(B)[None, :], states[:, :B], actions]
    return actions, rewards, states


# --- exact and sampled laws of the batch summary -----------------------------


def enumerate_lookaheads(mdp: TabularMDP, h: int, s0: int, B: int, cap: int = 10_000):
    """All distinct pruned lookaheads from ``(h, s0)`` with their probabilities.

    Only factor groups owning a reachable cell are branched on; the others
    are pruned away and never influence the result. ``cap`` bounds the number
    of returned lookaheads.
    """
    B = check_batch(mdp, h, B)
    s0 = check_state(mdp, s0, "s0")
    S, A = mdp.S, mdp.A
    R = np.zeros((S, A, B))
    NS = np.full((S, A, B), EMPTY, dtype=np.int64)
    out: list[tuple[float, LookaheadInfo]] = []

    def rec(b: int, reach: list[int], p: float):
        if b == B:
            if len(out) >= cap:
                raise EnumerationInfeasible(f"more than {cap} lookahead realizations from (h={h}, s={s0}, B={B})")
            out.append((p, LookaheadInfo(h, s0, B, R.copy(), NS.copy())))
            return
        law = mdp.law(h + b)
        comp = mdp.compiled(h + b)
        rel = sorted({int(comp.group_of_cell[s, a]) for s in reach for a in range(A)})
        for combo in itertools.product(*(range(law.groups[g].n_outcomes) for g in rel)):
            w = 1.0
            for g, k in zip(rel, combo):
                w *= float(law.groups[g].weights[k])
            pick = dict(zip(rel, combo))
            nxt = set()
            for s in reach:
                for a in range(A):
                    k = pick[int(comp.group_of_cell[s, a])]
                    R[s, a, b] = comp.cell_reward[s, a, k]
                    NS[s, a, b] = comp.cell_next[s, a, k]
                    nxt.add(int(NS[s, a, b]))
            rec(b + 1, sorted(nxt), p * w)
        for s in reach:
            R[s, :, b] = 0.0
            NS[s, :, b] = EMPTY

    rec(0, [s0], 1.0)
    return out


@dataclass(frozen=True, eq=False)
class SummaryLaw:
    """Finite law over batch summaries: ``probs[m]`` and ``best[m, s]``."""

    h: int
    s0: int
    B: int
    probs: np.ndarray
    best: np.ndarray
    exact: bool
    n_samples: int = 0

    def q_values(self, V) -> np.ndarray:
        return np.max(self.best + np.asarray(V, dtype=float), axis=1)

    def moments(self, V) -> tuple[float, float]:
        q = self.q_values(V)
        mean = float(np.dot(self.probs, q))
        var = float(np.dot(self.probs, q * q)) - mean * mean
        return mean, max(var, 0.0)

    def planned_ends(self, V) -> np.ndarray:
        """Lowest-index maximizing end state per summary."""
        return np.argmax(self.best + np.asarray(V, dtype=float), axis=1)

    def summaries(self):
        return [(float(p), BatchSummary(self.h, self.s0, self.B, row.copy())) for p, row in zip(self.probs, self.best)]


def _merge(probs: np.ndarray, best: np.ndarray):
    uniq, inv = np.unique(best, axis=0, return_inverse=True)
    return np.bincount(inv.reshape(-1), weights=probs, minlength=len(uniq)), uniq


def exact_summary_law(mdp: TabularMDP, h: int, s0: int, B: int, cap: int = 10_000) -> SummaryLaw:
    """Exact law of ``compute_summary`` under fresh lookahead from ``(h, s0)``.

    Expands offset by offset, merging identical partial summaries; ``cap``
    bounds the number of joint outcomes expanded at any single offset.
    """
    B = check_batch(mdp, h, B)
    s0 = check_state(mdp, s0, "s0")
    S, A = mdp.S, mdp.A
    probs = np.ones(1)
    J = np.full((1, S), NEG_INF)
    J[0, s0] = 0.0
    for b in range(B):
        comp = mdp.compiled(h + b)
        reach_mask = J > NEG_INF
        _, sig = np.unique(reach_mask, axis=0, return_inverse=True)
        sig = sig.reshape(-1)
        parts_p, parts_J, expanded = [], [], 0
        for k in range(sig.max() + 1):
            rows = np.flatnonzero(sig == k)
            rs = np.flatnonzero(reach_mask[rows[0]])
            rel = sorted({int(g) for g in comp.group_of_cell[rs].ravel()})
            ks = [int(comp.n_outcomes[g]) for g in rel]
            n_combo = int(np.prod(ks, dtype=object))
            expanded += len(rows) * n_combo
            if expanded > cap:
                raise EnumerationInfeasible(
                    f"lookahead from (h={h}, s={s0}, B={B}) needs more than {cap} joint outcomes at offset {b}"
                )
            combos = np.stack(np.unravel_index(np.arange(n_combo), ks), axis=1)
            w = np.ones(n_combo)
            for j, g in enumerate(rel):
                w = w * comp.weights[g][combos[:, j]]
            col = {g: j for j, g in enumerate(rel)}
            Jk = J[rows]
            newJ = np.full((len(rows), n_combo, S), NEG_INF)
            for s in rs:
                for a in range(A):
                    oi = combos[:, col[int(comp.group_of_cell[s, a])]]
                    r = comp.cell_reward[s, a, oi]
                    t = comp.cell_next[s, a, oi]
                    cand = Jk[:, s][:, None] + r[None, :]
                    for tv in np.unique(t):
                        m = t == tv
                        newJ[:, m, tv] = np.maximum(newJ[:, m, tv], cand[:, m])
            parts_p.append((probs[rows][:, None] * w[None, :]).reshape(-1))
            parts_J.append(newJ.reshape(-1, S))
        probs, J = _merge(np.concatenate(parts_p), np.concatenate(parts_J))
    return SummaryLaw(h, s0, B, probs, J, exact=True)


def sampled_summary_law(mdp: TabularMDP, h: int, s0: int, B: int, n: int, rng: np.random.Generator) -> SummaryLaw:
    """Empirical law of ``n`` independent lookahead summaries from ``(h, s0)``."""
    B = check_batch(mdp, h, B)
    s0 = check_state(mdp, s0, "s0")
    S, A = mdp.S, mdp.A
    rows = np.arange(n)
    J = np.full((n, S), NEG_INF)
    J[:, s0] = 0.0
    for b in range(B):
        comp = mdp.compiled(h + b)
        R_b, N_b = comp.tables(comp.draw(rng.random((n, comp.n_groups))))
        newJ = np.full((n, S), NEG_INF)
        for s in np.flatnonzero(np.any(J > NEG_INF, axis=0)):
            for a in range(A):
                np.maximum.at(newJ, (rows, N_b[:, s, a]), J[:, s] + R_b[:, s, a])
        J = newJ
    probs, best = _merge(np.full(n, 1.0 / n), J)
    return SummaryLaw(h, s0, B, probs, best, exact=False, n_samples=n)


__all__ = [
    "LookaheadInfo",
    "BatchSummary",
    "SummaryLaw",
    "extract_lookahead",
    "compute_summary",
    "q_star",
    "extract_policy",
    "plan_windows",
    "rollout",
    "enumerate_lookaheads",
    "exact_summary_law",
    "sampled_summary_law",
]
