"""Tabular episodic MDPs with correlated within-step randomness.

The randomness of step ``h`` is a product of independent *factor groups*.
Each group owns a set of ``(state, action)`` cells and a finite list of
weighted outcomes; an outcome fixes the reward and next state of every cell
in the group simultaneously. One group per step gives a fully correlated
step, one group per cell gives fully independent cells.

Steps are 1-based throughout the public API (``h = 1..H``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from ._validation import check_action, check_int, check_state, check_step

EMPTY = -1
"""Next-state code of pruned or padded lookahead cells. Never a valid state."""

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class StepScenario:
    """Joint realization of rewards and next states of all cells at one step."""

    reward_table: np.ndarray
    next_table: np.ndarray


@dataclass(frozen=True, eq=False)
class FactorGroup:
    """Finite joint law over the rewards and next states of ``cells``.

    ``rewards[k, i]`` and ``nexts[k, i]`` are the reward and next state of
    ``cells[i]`` under outcome ``k``, which has probability ``weights[k]``.
    """

    cells: tuple[tuple[int, int], ...]
    weights: np.ndarray
    rewards: np.ndarray
    nexts: np.ndarray

    def __post_init__(self):
        cells = tuple((int(s), int(a)) for s, a in self.cells)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        rewards = np.asarray(self.rewards, dtype=float).reshape(len(weights), len(cells))
        nexts = np.asarray(self.nexts, dtype=np.int64).reshape(len(weights), len(cells))
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "nexts", nexts)

    @classmethod
    def from_outcomes(cls, cells, outcomes) -> "FactorGroup":
        """Build from ``[(weight, rewards_per_cell, nexts_per_cell), ...]``."""
        outcomes = list(outcomes)
        return cls(
            cells=tuple(cells),
            weights=[w for w, _, _ in outcomes],
            rewards=[list(r) for _, r, _ in outcomes],
            nexts=[list(n) for _, _, n in outcomes],
        )

    @classmethod
    def deterministic(cls, cells, rewards, nexts) -> "FactorGroup":
        return cls.from_outcomes(cells, [(1.0, rewards, nexts)])

    @classmethod
    def bernoulli(cls, cell, p: float, next_state: int) -> "FactorGroup":
        """Single cell with a Ber(p) reward and a deterministic transition."""
        if p >= 1.0:
            return cls.deterministic([cell], [1.0], [next_state])
        if p <= 0.0:
            return cls.deterministic([cell], [0.0], [next_state])
        return cls.from_outcomes([cell], [(p, [1.0], [next_state]), (1.0 - p, [0.0], [next_state])])

    @property
    def n_outcomes(self) -> int:
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class StepLaw:
    h: int
    groups: tuple[FactorGroup, ...]

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))

    @property
    def n_scenarios(self) -> int:
        """Number of joint outcomes of the step (product over groups)."""
        return int(np.prod([g.n_outcomes for g in self.groups], dtype=object))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    kind: str | None = None
    message: str = ""
    h: int | None = None
    group: int | None = None

    def __bool__(self) -> bool:
        return self.ok


class _CompiledStep:
    """Dense lookup arrays for one step law, used by the samplers."""

    def __init__(self, law: StepLaw, S: int, A: int):
        groups = law.groups
        G = len(groups)
        kmax = max(g.n_outcomes for g in groups)
        self.n_groups = G
        self.n_outcomes = np.array([g.n_outcomes for g in groups], dtype=np.int64)
        self.weights = [g.weights for g in groups]
        self.group_of_cell = np.empty((S, A), dtype=np.int64)
        # thresholds for inverse-cdf sampling; the last real outcome absorbs roundoff
        self.cum = np.full((G, max(kmax - 1, 1)), np.inf)
        self.cell_reward = np.zeros((S, A, kmax))
        self.cell_next = np.zeros((S, A, kmax), dtype=np.int64)
        for gi, g in enumerate(groups):
            K = g.n_outcomes
            if K > 1:
                self.cum[gi, : K - 1] = np.cumsum(g.weights)[: K - 1]
            for ci, (s, a) in enumerate(g.cells):
                self.group_of_cell[s, a] = gi
                self.cell_reward[s, a, :K] = g.rewards[:, ci]
                self.cell_next[s, a, :K] = g.nexts[:, ci]
        self._si = np.arange(S)[:, None]
        self._ai = np.arange(A)[None, :]

    def draw(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms ``u[..., G]`` to outcome indices per group."""
        return (u[..., None] >= self.cum).sum(axis=-1)

    def tables(self, outcomes: np.ndarray):
        """Reward and next-state tables for outcome indices ``outcomes[..., G]``."""
        idx = outcomes[..., self.group_of_cell]
        return self.cell_reward[self._si, self._ai, idx], self.cell_next[self._si, self._ai, idx]


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Episodic MDP ``(S, A, H)`` with lookahead range ``ell`` and per-step laws."""

    S: int
    A: int
    H: int
    ell: int
    laws: tuple[StepLaw, ...]
    terminal: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "laws", tuple(self.laws))

    def law(self, h: int) -> StepLaw:
        return self.laws[h - 1]

    def effective_lookahead(self, h: int) -> int:
        return effective_lookahead(self, h)

    @cached_property
    def _compiled(self) -> list[_CompiledStep]:
        report = validate_mdp(self)
        if not report.ok:
            raise ValueError(f"invalid MDP ({report.kind}): {report.message}")
        return [_CompiledStep(law, self.S, self.A) for law in self.laws]

    def compiled(self, h: int) -> _CompiledStep:
        return self._compiled[h - 1]

    @cached_property
    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        """Expected rewards ``r[h-1, s, a]`` and kernel ``P[h-1, s, a, s']``."""
        self._compiled  # validates
        r = np.zeros((self.H, self.S, self.A))
        P = np.zeros((self.H, self.S, self.A, self.S))
        for hi, law in enumerate(self.laws):
            for g in law.groups:
                for ci, (s, a) in enumerate(g.cells):
                    r[hi, s, a] = float(np.dot(g.weights, g.rewards[:, ci]))
                    np.add.at(P[hi, s, a], g.nexts[:, ci], g.weights)
        return r, P

    def to_dict(self) -> dict:
        return mdp_to_dict(self)


@dataclass(frozen=True, eq=False)
class EpisodeRealization:
    """Sampled joint scenario of a whole episode.

    ``outcomes[h-1]`` holds one outcome index per factor group of step ``h``;
    ``rewards`` and ``nexts`` are the induced ``(H, S, A)`` tables.
    """

    outcomes: tuple[np.ndarray, ...]
    rewards: np.ndarray
    nexts: np.ndarray

    @classmethod
    def from_outcomes(cls, mdp: TabularMDP, outcomes: Sequence[Sequence[int]]) -> "EpisodeRealization":
        if len(outcomes) != mdp.H:
            raise ValueError(f"expected {mdp.H} steps of outcomes, got {len(outcomes)}")
        outs, R, N = [], np.empty((mdp.H, mdp.S, mdp.A)), np.empty((mdp.H, mdp.S, mdp.A), dtype=np.int64)
        for hi, o in enumerate(outcomes):
            comp = mdp.compiled(hi + 1)
            o = np.asarray(o, dtype=np.int64)
            if o.shape != (comp.n_groups,) or np.any(o < 0) or np.any(o >= comp.n_outcomes):
                raise ValueError(f"invalid outcome indices at step {hi + 1}: {o}")
            R[hi], N[hi] = comp.tables(o)
            outs.append(o)
        return cls(tuple(outs), R, N)

    def scenario(self, h: int) -> StepScenario:
        return StepScenario(self.rewards[h - 1], self.nexts[h - 1])


def effective_lookahead(mdp: TabularMDP, h: int) -> int:
    """``min(ell, H - h + 1)``: the largest usable batch at step ``h``."""
    h = check_step(mdp, h)
    return min(mdp.ell, mdp.H - h + 1)


def validate_mdp(mdp: TabularMDP) -> ValidationReport:
    """Check every structural invariant; report the first violation found."""
    for name in ("S", "A", "H", "ell"):
        v = getattr(mdp, name)
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
            return ValidationReport(False, "dimensions", f"{name} must be a positive integer, got {v!r}")
    S, A, H = mdp.S, mdp.A, mdp.H
    if mdp.ell > H:
        return ValidationReport(False, "dimensions", f"ell={mdp.ell} exceeds H={H}")
    if len(mdp.laws) != H:
        return ValidationReport(False, "laws", f"expected {H} step laws, got {len(mdp.laws)}")
    if mdp.terminal is not None and not 0 <= mdp.terminal < S:
        return ValidationReport(False, "terminal", f"terminal state {mdp.terminal} out of range")
    for hi, law in enumerate(mdp.laws):
        h = hi + 1
        if law.h != h:
            return ValidationReport(False, "laws", f"law at position {h} is labelled h={law.h}", h)
        if not law.groups:
            return ValidationReport(False, "cover", "step has no factor groups", h)
        seen = np.zeros((S, A), dtype=bool)
        for gi, g in enumerate(law.groups):
            where = dict(h=h, group=gi)
            if g.n_outcomes == 0 or not g.cells:
                return ValidationReport(False, "outcomes", "group has no outcomes or no cells", **where)
            if np.any(g.weights <= 0) or abs(float(np.sum(g.weights)) - 1.0) > WEIGHT_TOL:
                return ValidationReport(
                    False, "weights", f"weights must be positive and sum to 1, got sum {np.sum(g.weights)!r}", **where
                )
            for s, a in g.cells:
                if not (0 <= s < S and 0 <= a < A):
                    return ValidationReport(False, "cells", f"cell {(s, a)} out of range", **where)
                if seen[s, a]:
                    return ValidationReport(False, "overlap", f"cell {(s, a)} owned by two groups", **where)
                seen[s, a] = True
            if np.any(~np.isfinite(g.rewards)) or np.any(g.rewards < 0) or np.any(g.rewards > 1):
                return ValidationReport(False, "reward_table", "rewards must lie in [0, 1]", **where)
            if np.any(g.nexts < 0) or np.any(g.nexts >= S):
                return ValidationReport(False, "next_table", f"next-state index outside [0, {S})", **where)
        if not seen.all():
            s, a = map(int, np.argwhere(~seen)[0])
            return ValidationReport(False, "cover", f"cell {(s, a)} not covered by any group", h)
    return ValidationReport(True)


def sample_episode(mdp: TabularMDP, rng: np.random.Generator) -> EpisodeRealization:
    """Draw one outcome per factor group and step (one uniform each, in order)."""
    outs, R, N = [], np.empty((mdp.H, mdp.S, mdp.A)), np.empty((mdp.H, mdp.S, mdp.A), dtype=np.int64)
    for hi in range(mdp.H):
        comp = mdp.compiled(hi + 1)
        o = comp.draw(rng.random(comp.n_groups))
        R[hi], N[hi] = comp.tables(o)
        outs.append(o)
    return EpisodeRealization(tuple(outs), R, N)


def episode_tables(mdp: TabularMDP, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reward and next-state tables ``(n, H, S, A)`` from per-episode uniforms.

    ``U[i]`` holds the uniforms one call of :func:`sample_episode` would
    consume, in the same order (steps first, then groups).
    """
    U = np.atleast_2d(U)
    n = U.shape[0]
    R = np.empty((n, mdp.H, mdp.S, mdp.A))
    N = np.empty((n, mdp.H, mdp.S, mdp.A), dtype=np.int64)
    col = 0
    for hi in range(mdp.H):
        comp = mdp.compiled(hi + 1)
        R[:, hi], N[:, hi] = comp.tables(comp.draw(U[:, col:col + comp.n_groups]))
        col += comp.n_groups
    if col != U.shape[1]:
        raise ValueError(f"expected {col} uniforms per episode, got {U.shape[1]}")
    return R, N


def n_uniforms(mdp: TabularMDP) -> int:
    """Uniform draws consumed by one sampled episode."""
    return sum(mdp.compiled(h).n_groups for h in range(1, mdp.H + 1))


def step(mdp: TabularMDP, real: EpisodeRealization, h: int, s: int, a: int) -> tuple[float, int]:
    h, s, a = check_step(mdp, h), check_state(mdp, s), check_action(mdp, a)
    return float(real.rewards[h - 1, s, a]), int(real.nexts[h - 1, s, a])


def marginal_law(mdp: TabularMDP, h: int, s: int, a: int) -> tuple[float, np.ndarray]:
    """Expected reward and next-state distribution of cell ``(s, a)`` at step ``h``."""
    h, s, a = check_step(mdp, h), check_state(mdp, s), check_action(mdp, a)
    r, P = mdp.marginals
    return float(r[h - 1, s, a]), P[h - 1, s, a].copy()


# --- JSON schema -------------------------------------------------------------
#
# {"S": int, "A": int, "H": int, "ell": int, "terminal": int | null,
#  "laws": [{"h": int,
#            "groups": [{"cells": [[s, a], ...],
#                        "outcomes": [{"w": float,
#                                      "rewards": [float per cell],
#                                      "next": [int per cell]}, ...]}, ...]}, ...]}
#
# "rewards" and "next" are aligned with "cells".


def mdp_to_dict(mdp: TabularMDP) -> dict:
    return {
        "S": int(mdp.S),
        "A": int(mdp.A),
        "H": int(mdp.H),
        "ell": int(mdp.ell),
        "terminal": None if mdp.terminal is None else int(mdp.terminal),
        "laws": [
            {
                "h": int(law.h),
                "groups": [
                    {
                        "cells": [[s, a] for s, a in g.cells],
                        "outcomes": [
                            {"w": float(g.weights[k]), "rewards": [float(x) for x in g.rewards[k]],
                             "next": [int(x) for x in g.nexts[k]]}
                            for k in range(g.n_outcomes)
                        ],
                    }
                    for g in law.groups
                ],
            }
            for law in mdp.laws
        ],
    }


_TOP_KEYS = {"S", "A", "H", "ell", "terminal", "laws"}


def mdp_from_dict(doc: dict) -> TabularMDP:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ValueError(f"unknown MDP keys: {sorted(unknown)}")
    laws = []
    for law in doc["laws"]:
        groups = [
            FactorGroup(
                cells=tuple(tuple(c) for c in g["cells"]),
                weights=[o["w"] for o in g["outcomes"]],
                rewards=[o["rewards"] for o in g["outcomes"]],
                nexts=[o["next"] for o in g["outcomes"]],
            )
            for g in law["groups"]
        ]
        laws.append(StepLaw(int(law["h"]), tuple(groups)))
    terminal = doc.get("terminal")
    return TabularMDP(
        S=check_int(doc["S"], "S"),
        A=check_int(doc["A"], "A"),
        H=check_int(doc["H"], "H"),
        ell=check_int(doc["ell"], "ell"),
        laws=tuple(laws),
        terminal=None if terminal is None else int(terminal),
    )


def dumps_mdp(mdp: TabularMDP) -> str:
    return json.dumps(mdp_to_dict(mdp), sort_keys=True, separators=(",", ":")) + "\n"


def save_mdp(mdp: TabularMDP, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path) -> TabularMDP:
    return mdp_from_dict(json.loads(Path(path).read_text()))
