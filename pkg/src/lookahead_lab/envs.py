"""Environment builders: the tree counterexamples, random benchmarks and the
delayed (state-duplicating) reduction."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_int
from .mdp import FactorGroup, StepLaw, TabularMDP, validate_mdp

CLAIM2_CASES = ("auto", "VB_gt", "VD_gt", "equal")


def _stationary(S: int, A: int, H: int, ell: int, groups, terminal: int | None) -> TabularMDP:
    mdp = TabularMDP(S, A, H, ell, [StepLaw(h, groups) for h in range(1, H + 1)], terminal=terminal)
    report = validate_mdp(mdp)
    if not report:
        raise AssertionError(f"builder produced an invalid MDP: {report.message}")
    return mdp


def _tree_levels(A: int, depth: int, first: int) -> list[list[int]]:
    """State indices of a complete ``A``-ary tree, level by level."""
    levels, nxt = [], first
    for d in range(depth):
        levels.append(list(range(nxt, nxt + A ** d)))
        nxt += A ** d
    return levels


def build_claim1_tree(A: int, ell: int, H: int, p: float | None = None, depth: int | None = None) -> TabularMDP:
    """Start state -> root of a complete ``A``-ary tree with Bernoulli leaf actions.

    State 0 is the start, state 1 the root; the tree has ``depth`` levels
    (default ``ell``) so leaf actions are played at step ``depth + 1``, just
    out of reach of an ``ell``-step window opened at step 1. Every leaf action
    pays an independent ``Ber(p)`` reward (default ``A**-ell``) and moves to the
    terminal state, which is the last index.
    """
    A = check_int(A, "A", low=2)
    ell = check_int(ell, "ell", low=2)
    depth = ell if depth is None else check_int(depth, "depth", low=1)
    H = check_int(H, "H", low=max(ell, depth) + 1)
    p = float(A) ** -ell if p is None else float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    levels = _tree_levels(A, depth, 1)
    terminal = levels[-1][-1] + 1
    S = terminal + 1
    cells, rewards, nexts = [], [], []

    def det(s, a, t):
        cells.append((s, a))
        rewards.append(0.0)
        nexts.append(t)

    for a in range(A):
        det(0, a, 1)
        det(terminal, a, terminal)
    for d in range(depth - 1):
        for i, s in enumerate(levels[d]):
            for a in range(A):
                det(s, a, levels[d + 1][i * A + a])
    groups = [FactorGroup.deterministic(cells, rewards, nexts)]
    for s in levels[-1]:
        for a in range(A):
            groups.append(FactorGroup.bernoulli((s, a), p, terminal))
    return _stationary(S, A, H, ell, groups, terminal)


def semi_terminal_values(A: int, ell: int) -> tuple[float, float]:
    """One-step backup values ``(V^B, V^D)`` of the two semi-terminal reward laws."""
    return float(A) ** -ell, float(A) ** (-ell / 2)


def build_claim2_tree_and_line(A: int, ell: int, H: int, case: str = "auto") -> TabularMDP:
    """Start state choosing between a tree (action 0) and a line (other actions).

    Layout: state 0 is the start, then the tree (``ell`` levels, root first),
    then the ``ell`` line states, then the terminal. Leaves and the line end
    are semi-terminal at step ``ell + 1``. Type ``D`` pays ``A**(-ell/2)``
    deterministically on every action; type ``B`` pays independent
    ``Ber(A**-ell)`` rewards.

    ``case`` places the types: ``VD_gt`` and ``equal`` put ``D`` at the line end
    and ``B`` at the leaves (``equal`` also pays ``0.25 * A**(-ell/2)`` on entry
    to the line); ``VB_gt`` swaps them; ``auto`` picks the case matching the
    default backward-induction values of the two types.
    """
    A = check_int(A, "A", low=2)
    ell = check_int(ell, "ell", low=2)
    H = check_int(H, "H", low=ell + 1)
    if case not in CLAIM2_CASES:
        raise ValueError(f"case must be one of {CLAIM2_CASES}, got {case!r}")
    vb, vd = semi_terminal_values(A, ell)
    if case == "auto":
        case = "VB_gt" if vb > vd else "VD_gt" if vd > vb else "equal"
    p, d_reward = vb, vd
    r_line = 0.25 * d_reward if case == "equal" else 0.0

    levels = _tree_levels(A, ell, 1)
    line = list(range(levels[-1][-1] + 1, levels[-1][-1] + 1 + ell))
    terminal = line[-1] + 1
    S = terminal + 1
    cells, rewards, nexts = [], [], []

    def det(s, a, r, t):
        cells.append((s, a))
        rewards.append(r)
        nexts.append(t)

    det(0, 0, 0.0, levels[0][0])
    for a in range(1, A):
        det(0, a, r_line, line[0])
    for a in range(A):
        det(terminal, a, 0.0, terminal)
        for d in range(ell - 1):
            for i, s in enumerate(levels[d]):
                det(s, a, 0.0, levels[d + 1][i * A + a])
        for s, t in zip(line[:-1], line[1:]):
            det(s, a, 0.0, t)

    bernoulli_states = levels[-1] if case != "VB_gt" else [line[-1]]
    deterministic_states = [line[-1]] if case != "VB_gt" else levels[-1]
    for s in deterministic_states:
        for a in range(A):
            det(s, a, d_reward, terminal)
    groups = [FactorGroup.deterministic(cells, rewards, nexts)]
    for s in bernoulli_states:
        for a in range(A):
            groups.append(FactorGroup.bernoulli((s, a), p, terminal))
    return _stationary(S, A, H, ell, groups, terminal)


def claim2_layout(A: int, ell: int) -> dict:
    """Indices of the named states of :func:`build_claim2_tree_and_line`."""
    levels = _tree_levels(A, ell, 1)
    first_line = levels[-1][-1] + 1
    line = list(range(first_line, first_line + ell))
    return {"start": 0, "root": 1, "leaves": levels[-1], "line": line, "line_end": line[-1],
            "terminal": line[-1] + 1}


def build_random_mdp(S: int, A: int, H: int, ell: int, seed: int, density: int = 2) -> TabularMDP:
    """Random benchmark MDP with independent per-cell randomness.

    Each cell ``(h, s, a)`` moves to one of ``density`` distinct random states
    (Dirichlet weights) and pays an independent ``Ber(mu)`` reward with
    ``mu ~ U(0, 1)``.
    """
    S = check_int(S, "S", low=1)
    A = check_int(A, "A", low=1)
    H = check_int(H, "H", low=1)
    ell = check_int(ell, "ell", low=1, high=H)
    density = check_int(density, "density", low=1, high=S)
    rng = np.random.default_rng(seed)
    laws = []
    for h in range(1, H + 1):
        groups = []
        for s in range(S):
            for a in range(A):
                support = rng.choice(S, size=density, replace=False)
                w = rng.dirichlet(np.ones(density)) if density > 1 else np.ones(1)
                mu = rng.uniform()
                outcomes = [(wj * q, [r], [int(t)])
                            for wj, t in zip(w, support)
                            for q, r in ((mu, 1.0), (1.0 - mu, 0.0)) if wj * q > 0]
                total = sum(o[0] for o in outcomes)
                groups.append(FactorGroup.from_outcomes([(s, a)], [(o[0] / total, o[1], o[2]) for o in outcomes]))
        laws.append(StepLaw(h, groups))
    return TabularMDP(S, A, H, ell, laws)


def build_correlated_mdp(S: int, A: int, H: int, ell: int, seed: int, max_outcomes: int = 3) -> TabularMDP:
    """Tiny MDP whose per-step randomness is one correlated factor group.

    At every step a random subset of cells shares a joint law with up to
    ``max_outcomes`` outcomes; the remaining cells are deterministic. The
    joint scenario count per step is therefore at most ``max_outcomes``.
    """
    rng = np.random.default_rng(seed)
    cells_all = [(s, a) for s in range(S) for a in range(A)]
    laws = []
    for h in range(1, H + 1):
        k = int(rng.integers(1, max_outcomes + 1))
        mask = rng.random(len(cells_all)) < 0.5
        if not mask.any():
            mask[rng.integers(len(cells_all))] = True
        rand_cells = [c for c, m in zip(cells_all, mask) if m]
        det_cells = [c for c, m in zip(cells_all, mask) if not m]
        w = rng.dirichlet(np.ones(k))
        groups = [FactorGroup(rand_cells, w,
                              rng.integers(0, 3, size=(k, len(rand_cells))) / 2.0,
                              rng.integers(0, S, size=(k, len(rand_cells))))]
        if det_cells:
            groups.append(FactorGroup.deterministic(det_cells, rng.integers(0, 3, len(det_cells)) / 2.0,
                                                    rng.integers(0, S, len(det_cells))))
        laws.append(StepLaw(h, groups))
    return TabularMDP(S, A, H, ell, laws)


def build_delayed_env(base: TabularMDP, ell: int) -> TabularMDP:
    """Duplicate every state ``ell`` times so the base dynamics advance every ``ell`` steps.

    State ``(s, j)`` has index ``s * ell + j``. At steps ``t = n * ell`` copy
    ``ell - 1`` follows the base law of step ``n`` into copy ``0``; at every
    other step the copy index advances by one with zero reward. The result
    has horizon ``ell * H``, ``ell * S`` states and lookahead range ``ell``.
    """
    ell = check_int(ell, "ell", low=1)
    report = validate_mdp(base)
    if not report:
        raise ValueError(f"invalid base MDP: {report.message}")
    S, A, H = base.S * ell, base.A, base.H * ell

    def idx(s, j):
        return s * ell + j

    laws = []
    for t in range(1, H + 1):
        groups = []
        if t % ell == 0:
            base_law = base.law(t // ell)
            for g in base_law.groups:
                groups.append(FactorGroup([(idx(s, ell - 1), a) for s, a in g.cells], g.weights, g.rewards,
                                          g.nexts * ell))
            moving = list(range(ell - 1))
        else:
            moving = list(range(ell))
        cells = [(idx(s, j), a) for s in range(base.S) for j in moving for a in range(A)]
        if cells:
            groups.append(FactorGroup.deterministic(
                cells, [0.0] * len(cells), [s - s % ell + (s % ell + 1) % ell for s, _ in cells]))
        laws.append(StepLaw(t, groups))
    terminal = None if base.terminal is None else idx(base.terminal, 0)
    return TabularMDP(S, A, H, min(ell, H), laws, terminal=terminal)


@dataclass
class EnvSpec:
    """Declarative description of an environment, buildable from CLI flags or JSON."""

    kind: str = "random"
    A: int = 2
    ell: int = 2
    H: int = 6
    S: int = 5
    seed: int = 0
    density: int = 2
    case: str = "auto"
    p: float | None = None
    base: dict | None = field(default=None)

    KINDS = ("claim1_tree", "claim2_tree_and_line", "random", "delayed")

    def build(self) -> TabularMDP:
        if self.kind == "claim1_tree":
            return build_claim1_tree(self.A, self.ell, self.H, p=self.p)
        if self.kind == "claim2_tree_and_line":
            return build_claim2_tree_and_line(self.A, self.ell, self.H, self.case)
        if self.kind == "random":
            return build_random_mdp(self.S, self.A, self.H, self.ell, self.seed, self.density)
        if self.kind == "delayed":
            base = EnvSpec(**(self.base or {"kind": "random", "S": self.S, "A": self.A, "H": self.H,
                                            "ell": 1, "seed": self.seed, "density": self.density}))
            return build_delayed_env(base.build(), self.ell)
        raise ValueError(f"unknown environment kind {self.kind!r}; expected one of {self.KINDS}")

    def to_dict(self) -> dict:
        return asdict(self)
