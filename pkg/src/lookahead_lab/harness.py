"""Experiment orchestration: configs, seeded runs, claims table and SVG plots."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._validation import EnumerationInfeasible, check_int, check_probability
from .baselines import ABPAgent, MarkovAgent, MPCAgent, check_assumption1, evaluate_agent
from .envs import EnvSpec, build_claim1_tree, build_claim2_tree_and_line, claim2_layout
from .learner import LearnerConfig, RegretRecord, read_regret_csv, regret_csv, run_learning
from .mdp import TabularMDP, load_mdp
from .planner import (
    ExpectationConfig,
    LookaheadLaws,
    ValueTable,
    constant_schedule,
    plan_fixed_batching,
    plan_optimal_abp,
)

AGENTS = ("al_ucb", "optimal_abp", "fixed_batching", "mpc", "markov")
WORKERS_ENV = "LOOKAHEAD_LAB_WORKERS"


class UserError(ValueError):
    """Invalid user input (bad config, flags or files); maps to exit code 1."""


@dataclass
class ExperimentConfig:
    """One experiment, read from a single JSON document (unknown keys are rejected).

    ``env`` holds :class:`EnvSpec` fields; ``mdp_path`` loads a saved MDP
    instead. ``schedule`` applies to ``fixed_batching`` (an int is a
    constant batch length). ``episodes`` is the Monte-Carlo budget of ``eval``.
    """

    env: dict = field(default_factory=dict)
    mdp_path: str | None = None
    agent: str = "al_ucb"
    delta: float = 0.05
    K: int = 1000
    eval_interval: int = 100
    exact_cap: int = 10_000
    mc_samples: int = 10_000
    seeds: list[int] = field(default_factory=lambda: [0])
    episodes: int = 10_000
    schedule: int | list[int] | None = None
    initial_state: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise UserError(f"agent must be one of {AGENTS}, got {self.agent!r}")
        if not self.seeds:
            raise UserError("at least one seed is required")
        try:
            check_probability(self.delta)
            check_int(self.K, "K", low=1)
            check_int(self.eval_interval, "eval_interval", low=0)
            check_int(self.exact_cap, "exact_cap", low=1)
            check_int(self.mc_samples, "mc_samples", low=1)
            check_int(self.episodes, "episodes", low=1)
            check_int(self.workers, "workers", low=1)
            for s in self.seeds:
                check_int(s, "seed", low=0)
        except ValueError as e:
            raise UserError(str(e)) from None
        env_keys = {f.name for f in fields(EnvSpec)}
        unknown = set(self.env) - env_keys
        if unknown:
            raise UserError(f"unknown env keys: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise UserError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise UserError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UserError(f"cannot read config {path}: {e}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def expectation(self) -> ExpectationConfig:
        return ExpectationConfig(cap=self.exact_cap, n_samples=self.mc_samples)

    def build_mdp(self) -> TabularMDP:
        if self.mdp_path is not None:
            try:
                return load_mdp(self.mdp_path)
            except (OSError, KeyError, TypeError, json.JSONDecodeError) as e:
                raise UserError(f"cannot load MDP from {self.mdp_path}: {e}") from None
        try:
            return EnvSpec(**self.env).build()
        except (TypeError, ValueError) as e:
            raise UserError(f"invalid environment: {e}") from None

    def env_label(self) -> str:
        if self.mdp_path is not None:
            return f"file:{self.mdp_path}"
        return EnvSpec(**self.env).kind


def resolve_workers(requested: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return check_int(int(env), WORKERS_ENV, low=1)
        except ValueError:
            raise UserError(f"{WORKERS_ENV} must be a positive integer, got {env!r}") from None
    return requested


def _infeasible_hint(e: EnumerationInfeasible) -> UserError:
    return UserError(f"{e}; raise --exact-cap or let the planner fall back to Monte Carlo "
                     "by keeping the cap below the joint outcome count")


# --- learning runs ---------------------------------------------------------------


def _learn_one(args) -> tuple[str, float | None, float, float]:
    cfg, seed = args
    mdp = cfg.build_mdp()
    lcfg = LearnerConfig(cfg.delta, cfg.K, cfg.eval_interval,
                         ExpectationConfig(cap=cfg.exact_cap, n_samples=cfg.mc_samples, seed=seed))
    t0 = time.perf_counter()
    records = run_learning(mdp, lcfg, cfg.initial_state, seed)
    elapsed = time.perf_counter() - t0
    last = records[-1]
    return regret_csv(records), last.regret_expected_cum, last.regret_realized_cum, elapsed


def _mean_stderr(values) -> dict:
    x = np.asarray(values, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return {"mean": float(x.mean()), "stderr": se, "values": x.tolist()}


def run_experiment(config: ExperimentConfig, out_csv, summary_path=None, timing_path=None) -> dict:
    """Run the learner once per seed and write the merged CSV and summaries.

    The CSV and the summary JSON depend only on the config (byte-identical
    across reruns, sequential or parallel). Wall-clock measurements go to a
    separate timing JSON.
    """
    if config.agent != "al_ucb":
        raise UserError("learning runs require agent 'al_ucb'")
    out_csv = Path(out_csv)
    summary_path = Path(summary_path) if summary_path else out_csv.with_suffix(".summary.json")
    timing_path = Path(timing_path) if timing_path else out_csv.with_suffix(".timing.json")
    config.build_mdp()  # fail fast on a bad environment
    jobs = [(config, int(s)) for s in config.seeds]
    workers = min(resolve_workers(config.workers), len(jobs))
    t0 = time.perf_counter()
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_learn_one, jobs))
        else:
            results = [_learn_one(j) for j in jobs]
    except EnumerationInfeasible as e:
        raise _infeasible_hint(e) from None
    wall = time.perf_counter() - t0
    chunks = [r[0] for r in results]
    body = chunks[0] + "".join(c.split("\n", 1)[1] for c in chunks[1:])
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    out_csv.write_text(body)
    summary = {
        "agent": config.agent,
        "env": config.env_label(),
        "K": config.K,
        "delta": config.delta,
        "seeds": [int(s) for s in config.seeds],
        "final_regret_realized": _mean_stderr([r[2] for r in results]),
    }
    if all(r[1] is not None for r in results):
        summary["final_regret_expected"] = _mean_stderr([r[1] for r in results])
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    n_eps = config.K * len(jobs)
    timing = {"wall_seconds": wall, "episodes": n_eps, "episodes_per_second": n_eps / wall if wall > 0 else None,
              "per_seed_seconds": [r[3] for r in results], "workers": workers}
    timing_path.write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return summary


# --- planning and evaluation -------------------------------------------------------


def plan_document(config: ExperimentConfig) -> dict:
    """Planned policy and its value table as a JSON-ready document."""
    mdp = config.build_mdp()
    laws = LookaheadLaws(mdp, config.expectation)
    try:
        if config.agent == "fixed_batching":
            schedule = _schedule(config, mdp)
            policy, values = plan_fixed_batching(mdp, schedule, laws=laws)
        else:
            policy = plan_optimal_abp(mdp, laws=laws)
            values = policy.value
    except EnumerationInfeasible as e:
        raise _infeasible_hint(e) from None
    doc = policy.to_dict()
    doc["V"] = values.to_list()
    doc["exact"] = laws.all_exact
    return doc


def _schedule(config: ExperimentConfig, mdp: TabularMDP) -> list[int]:
    sched = config.schedule if config.schedule is not None else mdp.ell
    try:
        if isinstance(sched, int):
            return constant_schedule(mdp.H, mdp.ell, sched)
        return [int(b) for b in sched]
    except ValueError as e:
        raise UserError(f"invalid schedule: {e}") from None


def make_agent(name: str, mdp: TabularMDP, config: ExperimentConfig):
    laws = LookaheadLaws(mdp, config.expectation)
    if name == "optimal_abp":
        return ABPAgent(plan_optimal_abp(mdp, laws=laws))
    if name == "fixed_batching":
        try:
            return ABPAgent(plan_fixed_batching(mdp, _schedule(config, mdp), laws=laws)[0])
        except ValueError as e:
            raise UserError(f"invalid schedule: {e}") from None
    if name == "mpc":
        return MPCAgent.default(mdp)
    if name == "markov":
        return MarkovAgent.optimal(mdp)
    raise UserError(f"agent {name!r} cannot be evaluated; choose from {AGENTS[1:]}")


def evaluate_rows(config: ExperimentConfig, agents=None) -> list[dict]:
    """``{agent, env, mean, stderr, n}`` per agent, using the first seed's episode streams."""
    mdp = config.build_mdp()
    agents = agents or ([config.agent] if config.agent != "al_ucb" else list(AGENTS[1:]))
    rows = []
    for name in agents:
        try:
            agent = make_agent(name, mdp, config)
        except EnumerationInfeasible as e:
            raise _infeasible_hint(e) from None
        res = evaluate_agent(mdp, agent, config.episodes, seed=int(config.seeds[0]), s1=config.initial_state,
                             cap=config.exact_cap)
        rows.append({"agent": name, "env": config.env_label(), "mean": res.mean, "stderr": res.stderr, "n": res.n})
    return rows


# --- claims table ------------------------------------------------------------------


@dataclass
class ClaimRow:
    quantity: str
    value: float
    bound: float
    relation: str
    stderr: float = 0.0

    @property
    def passed(self) -> bool:
        if self.relation == ">":
            return self.value > self.bound
        if self.relation == ">=":
            return self.value >= self.bound - 3 * self.stderr
        if self.relation == "<=":
            return self.value <= self.bound + 3 * self.stderr
        if self.relation == "==":
            return abs(self.value - self.bound) <= max(3 * self.stderr, 1e-9)
        raise ValueError(self.relation)

    def as_list(self) -> list[str]:
        return [self.quantity, repr(self.value), f"{self.relation} {self.bound!r}", "pass" if self.passed else "fail"]


def reproduce_claims(A: int = 2, ell: int = 4, H: int | None = None, episodes: int = 100_000, seed: int = 0,
                     cap: int = 1 << 17) -> list[ClaimRow]:
    """Compute every counterexample quantity and compare with its bound.

    Planner values are exact whenever the lookahead law is enumerable within
    ``cap``; agent values that need simulation use ``episodes`` Monte-Carlo
    episodes and are compared against the bound with a 3-standard-error
    allowance.
    """
    A = check_int(A, "A", low=2)
    ell = check_int(ell, "ell", low=2)
    if ell not in (2, 4):
        raise UserError("claims are reproduced for ell in {2, 4} only (desk-scale guard)")
    H = ell + 1 if H is None else check_int(H, "H", low=ell + 1)
    cfg = ExpectationConfig(cap=cap, n_samples=episodes, seed=seed)
    rows = []

    m1 = build_claim1_tree(A, ell, H)
    laws1 = LookaheadLaws(m1, cfg)
    v_opt1 = plan_optimal_abp(m1, laws=laws1).value[1][0]
    rows.append(ClaimRow("claim1.optimal_abp_value", float(v_opt1), 0.5, ">"))
    fixed_bound = float(A) ** (-ell / 2 + 1)
    for B in range(1, ell + 1):
        v = plan_fixed_batching(m1, constant_schedule(H, ell, B), laws=laws1)[1][1][0]
        rows.append(ClaimRow(f"claim1.fixed_B{B}_value", float(v), fixed_bound, "<="))

    m2 = build_claim2_tree_and_line(A, ell, H, "auto")
    laws2 = LookaheadLaws(m2, cfg)
    opt2 = plan_optimal_abp(m2, laws=laws2)
    v_opt2 = float(opt2.value[1][0])
    default = MPCAgent.default(m2)
    mpc = evaluate_agent(m2, default, episodes, seed=seed, cap=10_000)
    ratio_se = mpc.stderr / v_opt2
    rows.append(ClaimRow("claim2.assumption1_default_scheme", float(check_assumption1(m2, default.values).ok),
                         1.0, "=="))
    rows.append(ClaimRow("claim2.optimal_abp_value", v_opt2, 1 - math.exp(-1), ">="))
    rows.append(ClaimRow("claim2.mpc_over_optimal_ratio", mpc.mean / v_opt2, float(A) ** (1 - ell / 2), "<=",
                         ratio_se))
    tree = evaluate_agent(m2, ABPAgent(opt2), episodes, seed=seed, cap=10_000)
    rows.append(ClaimRow("claim2.tree_traversal_mc", tree.mean, 1 - math.exp(-1), ">=", tree.stderr))
    unit = unit_leaf_mpc(m2, A, ell)
    unit_res = evaluate_agent(m2, unit, episodes, seed=seed, cap=10_000)
    rows.append(ClaimRow("claim2.unit_leaf_mpc_value", unit_res.mean, v_opt2, "==", unit_res.stderr))
    return rows


def unit_leaf_mpc(mdp: TabularMDP, A: int, ell: int) -> MPCAgent:
    """MPC agent with unit values at the tree leaves and zero at the line end (step ``ell + 1``)."""
    layout = claim2_layout(A, ell)
    V = np.zeros((mdp.H + 1, mdp.S))
    V[ell, layout["leaves"]] = 1.0
    return MPCAgent(ValueTable(V), "unit-leaf")


def claims_csv(rows: list[ClaimRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value", "bound", "pass"])
    for r in rows:
        w.writerow(r.as_list())
    return buf.getvalue()


# --- SVG plot --------------------------------------------------------------------


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_plot(in_csv, out_svg, sqrt_ref: bool = False, width: int = 640, height: int = 400) -> str:
    """Cumulative realized regret per seed, their mean and an optional ``c * sqrt(k)`` reference.

    Seeds are drawn as ``<polyline class="seed">``, the mean as
    ``<polyline class="mean">`` and the reference as a single ``<path>``. A
    header-only CSV gives an axes-only plot.
    """
    with open(in_csv, newline="") as fh:
        records = read_regret_csv(fh)
    by_seed: dict[int, list[RegretRecord]] = {}
    for r in records:
        by_seed.setdefault(r.seed, []).append(r)
    left, right, top, bottom = 60, 20, 20, 40
    pw, ph = width - left - right, height - top - bottom
    kmax = max((r.episode for r in records), default=1)
    ymax = max((r.regret_realized_cum for r in records), default=1.0)
    ymin = min(0.0, min((r.regret_realized_cum for r in records), default=0.0))
    if ymax <= ymin:
        ymax = ymin + 1.0

    def xy(k, y):
        x = left + pw * (k / kmax if kmax else 0.0)
        return x, top + ph * (1 - (y - ymin) / (ymax - ymin))

    def pts(seq):
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(k, v) for k, v in seq))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<line class="axis" x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
           f'<text x="{left + pw / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">episode</text>',
           f'<text x="14" y="{top + ph / 2:.0f}" font-size="12" transform="rotate(-90 14 {top + ph / 2:.0f})" '
           f'text-anchor="middle">cumulative regret</text>',
           f'<text x="{left - 4}" y="{top + 4}" text-anchor="end" font-size="10">{ymax:.3g}</text>',
           f'<text x="{left - 4}" y="{top + ph}" text-anchor="end" font-size="10">{ymin:.3g}</text>',
           f'<text x="{left + pw}" y="{top + ph + 14}" text-anchor="end" font-size="10">{kmax}</text>']
    curves = []
    for seed in sorted(by_seed):
        rs = sorted(by_seed[seed], key=lambda r: r.episode)
        curves.append({r.episode: r.regret_realized_cum for r in rs})
        out.append(f'<polyline class="seed" data-seed="{seed}" fill="none" stroke="#9ab" stroke-width="1" '
                   f'points="{pts((r.episode, r.regret_realized_cum) for r in rs)}"/>')
    if len(curves) > 1:
        common = sorted(set.intersection(*(set(c) for c in curves)))
        mean = [(k, sum(c[k] for c in curves) / len(curves)) for k in common]
        out.append(f'<polyline class="mean" fill="none" stroke="#c33" stroke-width="2" points="{pts(mean)}"/>')
    if sqrt_ref and records:
        last = [c[max(c)] for c in curves]
        c = (sum(last) / len(last)) / math.sqrt(kmax)
        ks = np.unique(np.linspace(0, kmax, 101).round().astype(int))
        d = " ".join(("M" if i == 0 else "L") + f"{x:.2f},{y:.2f}"
                     for i, (x, y) in enumerate(xy(int(k), c * math.sqrt(k)) for k in ks))
        out.append(f'<path class="reference" d="{d}" fill="none" stroke="#393" stroke-dasharray="4 3"/>')
        out.append(f'<text x="{left + pw}" y="{top + 12}" text-anchor="end" font-size="10">'
                   f'{_esc(f"reference {c:.3g}*sqrt(k)")}</text>')
    out.append("</svg>")
    svg = "\n".join(out) + "\n"
    Path(out_svg).write_text(svg)
    return svg
