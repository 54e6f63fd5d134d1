"""Optimistic learning of adaptive batching policies from observed lookahead.

The learner keeps every batch summary it has observed, keyed by the batch
start ``(h, s, B)``. Each episode it recomputes optimistic batch values from
those samples (empirical mean of ``q_star`` against the optimistic values at
``h + B``, plus a variance-aware bonus, clipped to ``H - h + 1``), picks the
range with the highest optimistic value at every batch start, and acts
greedily inside the batch.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_probability, check_state
from .lookahead import BatchSummary, compute_summary
from .mdp import TabularMDP, sample_episode
from .planner import (
    ABPPolicy,
    EpisodeTrace,
    ExpectationConfig,
    LookaheadLaws,
    ValueTable,
    evaluate_abp,
    plan_optimal_abp,
    play_batches,
)
from .rng import episode_rng


def log_term(k: int, delta: float, S: int, H: int, ell: int) -> float:
    """Confidence log term ``ln(18 S H ell k^3 (k + 1) / delta)``."""
    k = check_int(k, "k", low=1)
    delta = check_probability(delta)
    L = math.log(18.0 * S * H * ell) + 3.0 * math.log(k) + math.log(k + 1.0) - math.log(delta)
    assert L >= 1.0, f"log term {L} < 1 outside the intended parameter range"
    return L


def bonus(variance: float, n, H: int, L: float) -> float:
    """``sqrt(8 var L / (n v 1)) + 11 H L / (n v 1)``."""
    n = max(n, 1)
    return math.sqrt(8.0 * max(variance, 0.0) * L / n) + 11.0 * H * L / n


class SampleStore:
    """Append-only store of observed batch summaries per ``(h, s, B)``.

    Identical summaries are stored once with a multiplicity, so statistics
    against a new value vector cost one vectorized pass over the distinct
    summaries rather than over every observation. Insertion order is kept
    for :meth:`rows`.
    """

    def __init__(self, S: int):
        self.S = S
        self._index: dict[tuple[int, int, int], dict[bytes, int]] = {}
        self._uniq: dict[tuple[int, int, int], np.ndarray] = {}
        self._counts: dict[tuple[int, int, int], np.ndarray] = {}
        self._order: dict[tuple[int, int, int], list[int]] = {}

    def add(self, summary: BatchSummary) -> None:
        key = (summary.h, summary.s0, summary.B)
        row = np.asarray(summary.best, dtype=float)
        index = self._index.setdefault(key, {})
        i = index.get(row.tobytes())
        if i is None:
            i = index[row.tobytes()] = len(index)
            buf = self._uniq.get(key)
            if buf is None or i == len(buf):
                grown = np.empty((max(8, 2 * i), self.S))
                counts = np.zeros(len(grown))
                if i:
                    grown[:i] = buf[:i]
                    counts[:i] = self._counts[key][:i]
                self._uniq[key], self._counts[key] = grown, counts
            self._uniq[key][i] = row
        self._counts[key][i] += 1
        self._order.setdefault(key, []).append(i)

    def count(self, h: int, s: int, B: int) -> int:
        return len(self._order.get((h, s, B), ()))

    def distinct(self, h: int, s: int, B: int) -> tuple[np.ndarray, np.ndarray]:
        """Distinct summary rows and their multiplicities."""
        m = len(self._index.get((h, s, B), ()))
        if not m:
            return np.empty((0, self.S)), np.empty(0)
        return self._uniq[(h, s, B)][:m], self._counts[(h, s, B)][:m]

    def rows(self, h: int, s: int, B: int) -> np.ndarray:
        """All observed rows in insertion order."""
        uniq, _ = self.distinct(h, s, B)
        return uniq[self._order.get((h, s, B), [])]

    def summaries(self, h: int, s: int, B: int) -> list[BatchSummary]:
        return [BatchSummary(h, s, B, row.copy()) for row in self.rows(h, s, B)]

    def keys(self):
        return sorted(self._order)

    @property
    def total(self) -> int:
        return sum(len(v) for v in self._order.values())

    def stats(self, h: int, s: int, B: int, V_next) -> tuple[float, float, float]:
        n = self.count(h, s, B)
        if not n:
            return 0.0, 0.0, 0
        uniq, counts = self.distinct(h, s, B)
        q = np.max(uniq + np.asarray(V_next, dtype=float), axis=1)
        mean = float(counts @ q) / n
        var = float(counts @ (q * q)) / n - mean * mean
        return mean, max(var, 0.0), n


class LawStore:
    """Drop-in replacement for :class:`SampleStore` backed by the true summary law.

    Reports an infinite sample count, so the standard bonus vanishes.
    """

    def __init__(self, laws: LookaheadLaws):
        self.laws = laws

    def stats(self, h: int, s: int, B: int, V_next) -> tuple[float, float, float]:
        mean, var = self.laws(h, s, B).moments(V_next)
        return mean, var, math.inf


def empirical_stats(store, h: int, s: int, B: int, V_next) -> tuple[float, float]:
    """Mean and population variance of ``q_star`` over the stored samples (``(0, 0)`` if none)."""
    mean, var, _ = store.stats(h, s, B, V_next)
    return mean, var


@dataclass(frozen=True, eq=False)
class OptimisticTables:
    """``Q[h-1, s, B-1]`` (``nan`` where ``B > ell_h``) and ``V[h-1, s]`` with a zero last row."""

    Q: np.ndarray
    V: np.ndarray
    k: int

    def batch(self, h: int, s: int) -> int:
        return int(np.nanargmax(self.Q[h - 1, s])) + 1

    @property
    def B(self) -> np.ndarray:
        filled = np.where(np.isnan(self.Q), -np.inf, self.Q)
        return np.argmax(filled, axis=2) + 1

    def policy(self) -> ABPPolicy:
        """The ABP this episode plays: argmax ranges, in-batch plans against ``V``."""
        return ABPPolicy(self.B, ValueTable(self.V), f"learner-episode-{self.k}", self.Q)


def compute_optimistic_tables(store, mdp: TabularMDP, k: int, delta: float,
                              bonus_fn: Callable[[float, float, int, float], float] = bonus) -> OptimisticTables:
    H, S = mdp.H, mdp.S
    L = log_term(k, delta, S, H, mdp.ell)
    Q = np.full((H, S, mdp.ell), np.nan)
    V = np.zeros((H + 1, S))
    for h in range(H, 0, -1):
        cap = float(H - h + 1)
        for s in range(S):
            for B in range(1, mdp.effective_lookahead(h) + 1):
                mean, var, n = store.stats(h, s, B, V[h - 1 + B])
                Q[h - 1, s, B - 1] = min(mean + bonus_fn(var, n, H, L), cap)
        V[h - 1] = np.nanmax(Q[h - 1], axis=1)
    return OptimisticTables(Q, V, k)


def run_episode(store: SampleStore, tables: OptimisticTables, mdp: TabularMDP, s1: int,
                rng: np.random.Generator) -> EpisodeTrace:
    """Play one episode with the given tables and add each observed batch to ``store``."""
    real = sample_episode(mdp, rng)
    return play_batches(mdp, tables.batch, tables.V, real, s1,
                        observe=lambda info: store.add(compute_summary(info)))


@dataclass
class LearnerConfig:
    """``eval_interval = 0`` records realized regret only."""

    delta: float = 0.05
    K: int = 1000
    eval_interval: int = 100
    expectation: ExpectationConfig = field(default_factory=ExpectationConfig)

    def __post_init__(self):
        check_probability(self.delta)
        check_int(self.K, "K", low=1)
        check_int(self.eval_interval, "eval_interval", low=0)


@dataclass
class RegretRecord:
    seed: int
    episode: int
    initial_state: int
    realized_return: float
    v_opt: float
    regret_realized_cum: float
    v_pi_exact: float | None = None
    regret_expected_cum: float | None = None

    COLUMNS = ("seed", "episode", "initial_state", "realized_return", "v_opt",
               "regret_realized_cum", "v_pi_exact", "regret_expected_cum")

    def to_row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in self.COLUMNS]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_regret_csv(records: Sequence[RegretRecord], fh, header: bool = True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(RegretRecord.COLUMNS)
    for r in records:
        w.writerow(r.to_row())


def regret_csv(records: Sequence[RegretRecord]) -> str:
    buf = io.StringIO()
    write_regret_csv(records, buf)
    return buf.getvalue()


def read_regret_csv(fh) -> list[RegretRecord]:
    """Parse a regret CSV; malformed rows raise ``ValueError`` naming the line."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(header) != RegretRecord.COLUMNS:
        raise ValueError(f"line 1: expected header {','.join(RegretRecord.COLUMNS)}, got {header}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            if len(row) != len(RegretRecord.COLUMNS):
                raise ValueError(f"expected {len(RegretRecord.COLUMNS)} fields, got {len(row)}")
            opt = [float(x) if x != "" else None for x in row[6:]]
            out.append(RegretRecord(int(row[0]), int(row[1]), int(row[2]), float(row[3]), float(row[4]),
                                    float(row[5]), *opt))
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
    return out


def _initial_state_source(mdp: TabularMDP, initial_states):
    if initial_states is None:
        return lambda k: 0
    if callable(initial_states):
        return initial_states
    if isinstance(initial_states, (int, np.integer)):
        s = check_state(mdp, initial_states, "initial_state")
        return lambda k: s
    seq = [check_state(mdp, s, "initial_state") for s in initial_states]
    if not seq:
        raise ValueError("initial state sequence is empty")
    return lambda k: seq[(k - 1) % len(seq)]


def run_learning(mdp: TabularMDP, cfg: LearnerConfig, initial_states=None, seed: int = 0,
                 optimal: ABPPolicy | None = None, laws: LookaheadLaws | None = None,
                 on_episode=None, bonus_fn=bonus, store: SampleStore | None = None) -> list[RegretRecord]:
    """Run ``cfg.K`` learning episodes and return one regret record per episode.

    Episode ``k`` is drawn from the stream ``episode_rng(seed, k)``. Realized
    regret compares the optimal ABP value at the initial state with the
    realized return. When ``cfg.eval_interval > 0``, every ``eval_interval``-th
    episode the ABP induced by that episode's tables is evaluated exactly and
    its gap, weighted by the interval, is added to the expected-regret
    estimate. ``on_episode(k, tables, trace)`` is called after each episode.
    Pass ``store`` to keep (or warm-start from) the observed summaries.
    """
    if laws is None:
        laws = LookaheadLaws(mdp, cfg.expectation)
    if optimal is None:
        optimal = plan_optimal_abp(mdp, laws=laws)
    v_star = optimal.value
    init = _initial_state_source(mdp, initial_states)
    if store is None:
        store = SampleStore(mdp.S)
    records = []
    reg_real = reg_exp = 0.0
    for k in range(1, cfg.K + 1):
        s1 = check_state(mdp, init(k), "initial_state")
        tables = compute_optimistic_tables(store, mdp, k, cfg.delta, bonus_fn)
        trace = run_episode(store, tables, mdp, s1, episode_rng(seed, k))
        v_opt = float(v_star[1][s1])
        reg_real += v_opt - trace.total
        rec = RegretRecord(seed, k, s1, trace.total, v_opt, reg_real)
        if cfg.eval_interval and k % cfg.eval_interval == 0:
            v_pi = float(evaluate_abp(mdp, tables.policy(), laws=laws)[1][s1])
            reg_exp += cfg.eval_interval * (v_opt - v_pi)
            rec.v_pi_exact, rec.regret_expected_cum = v_pi, reg_exp
        records.append(rec)
        if on_episode is not None:
            on_episode(k, tables, trace)
    return records


class ALUCB(BaseEstimator):
    """Estimator front-end for the optimistic batching learner.

    ``fit(mdp)`` runs ``K`` episodes and exposes ``records_`` (per-episode
    regret), ``store_`` (observed summaries), ``tables_`` (optimistic tables
    after the last update) and ``optimal_`` (the optimal ABP used for regret).
    """

    def __init__(self, delta=0.05, K=1000, eval_interval=0, cap=10_000, n_samples=10_000, seed=0,
                 initial_state=0):
        self.delta = delta
        self.K = K
        self.eval_interval = eval_interval
        self.cap = cap
        self.n_samples = n_samples
        self.seed = seed
        self.initial_state = initial_state

    def _config(self) -> LearnerConfig:
        return LearnerConfig(self.delta, self.K, self.eval_interval,
                             ExpectationConfig(cap=self.cap, n_samples=self.n_samples, seed=self.seed))

    def fit(self, mdp: TabularMDP, y=None):
        cfg = self._config()
        laws = LookaheadLaws(mdp, cfg.expectation)
        self.optimal_ = plan_optimal_abp(mdp, laws=laws)
        self.store_ = SampleStore(mdp.S)
        self.records_ = run_learning(mdp, cfg, self.initial_state, self.seed, optimal=self.optimal_, laws=laws,
                                     store=self.store_)
        self.tables_ = compute_optimistic_tables(self.store_, mdp, cfg.K + 1, cfg.delta)
        return self

    def predict(self, states, h: int = 1) -> np.ndarray:
        """Ranges the learner would choose next episode at step ``h``."""
        check_is_fitted(self, "tables_")
        return self.tables_.B[h - 1, np.asarray(states, dtype=np.int64)]

    @property
    def cumulative_regret_(self) -> np.ndarray:
        check_is_fitted(self, "records_")
        return np.array([r.regret_realized_cum for r in self.records_])
