"""End-to-end acceptance checks, one test per criterion.

Every test records a one-line PASS/FAIL verdict that is printed immediately
and repeated in the pytest terminal summary.
"""
import json
import math
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import ACCEPTANCE
from lookahead_lab.baselines import check_assumption1, MPCAgent
from lookahead_lab.cli import main
from lookahead_lab.envs import build_claim1_tree, build_correlated_mdp, build_random_mdp
from lookahead_lab.learner import (
    LawStore,
    LearnerConfig,
    compute_optimistic_tables,
    read_regret_csv,
    run_learning,
)
from lookahead_lab.lookahead import LookaheadInfo, compute_summary, extract_policy, prune, q_star
from lookahead_lab.mdp import sample_episode
from lookahead_lab.planner import (
    ExpectationConfig,
    LookaheadLaws,
    constant_schedule,
    plan_fixed_batching,
    plan_optimal_abp,
    play_batches,
    solve_augmented_oracle,
)
from lookahead_lab.harness import reproduce_claims
from lookahead_lab.rng import episode_rng
from oracles import best_over_sequences, window_value


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def test_1_oracle_equivalence():
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    rng = np.random.default_rng(2024)
    for seed in range(24):
        S, A, H = int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(1, 5))
        ell = int(rng.integers(1, min(2, H) + 1))
        mdp = build_correlated_mdp(S, A, H, ell, seed, max_outcomes=3)
        V = plan_optimal_abp(mdp, ExpectationConfig(cap=10 ** 7)).value.V
        worst = max(worst, float(np.max(np.abs(V - solve_augmented_oracle(mdp).V))))
        count += 1
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-9 and elapsed <= 60,
            f"{count} tiny MDPs, max |dV| = {worst:.2e} (<= 1e-9), {elapsed:.1f}s (<= 60s)")


def test_2_batch_dp_brute_force():
    rng = np.random.default_rng(7)
    n = mismatched = 0
    for _ in range(150):
        A = int(rng.integers(1, 4))
        B = int(rng.integers(1, 6 if A == 3 else 10))
        if A ** B > 512:
            continue
        S = int(rng.integers(1, 7))
        R = rng.integers(0, 9, size=(S, A, B)) / 8.0
        NS = rng.integers(0, S, size=(S, A, B))
        s0 = int(rng.integers(S))
        Rb, Nb = R.transpose(2, 0, 1).tolist(), NS.transpose(2, 0, 1).tolist()
        brute, _ = best_over_sequences(Rb, Nb, s0, [0.0] * S)
        pr, pn = R.copy(), NS.copy()
        prune(pr, pn, s0)
        info = LookaheadInfo(1, s0, B, pr, pn)
        value = q_star(compute_summary(info), np.zeros(S))
        total, _ = window_value(Rb, Nb, s0, extract_policy(info, np.zeros(S)))
        mismatched += value != brute or total != brute
        n += 1
    verdict(2, n >= 100 and mismatched == 0, f"{n} realizations with A^B <= 512, {mismatched} mismatches")


def test_3_claim1_reproduction():
    t0 = time.perf_counter()
    mdp = build_claim1_tree(2, 4, 5)
    laws = LookaheadLaws(mdp, ExpectationConfig(cap=1 << 17))
    opt = plan_optimal_abp(mdp, laws=laws).value[1][0]
    fixed = {B: plan_fixed_batching(mdp, constant_schedule(5, 4, B), laws=laws)[1][1][0] for B in range(1, 5)}
    elapsed = time.perf_counter() - t0
    ok = opt > 0.5 and max(fixed.values()) <= 0.5 and laws.all_exact and elapsed <= 300
    shown = ", ".join(f"B={B}: {v:.4f}" for B, v in fixed.items())
    verdict(3, ok, f"optimal ABP {opt:.4f} (> 0.5); fixed {shown} (<= 0.5); exact={laws.all_exact}; "
                   f"{elapsed:.1f}s")


def test_4_claim2_reproduction():
    t0 = time.perf_counter()
    rows = {r.quantity: r for r in reproduce_claims(2, 4, episodes=100_000, seed=0)}
    elapsed = time.perf_counter() - t0
    ratio = rows["claim2.mpc_over_optimal_ratio"]
    tree = rows["claim2.tree_traversal_mc"]
    unit = rows["claim2.unit_leaf_mpc_value"]
    a1 = rows["claim2.assumption1_default_scheme"]
    ok = (ratio.value <= 0.5 + 3 * ratio.stderr and tree.value >= 1 - math.exp(-1) - 0.02
          and unit.passed and a1.value == 1.0 and elapsed <= 600)
    verdict(4, ok, f"MPC/optimal {ratio.value:.4f} (<= 0.5); tree traversal {tree.value:.4f} "
                   f"(>= {1 - math.exp(-1) - 0.02:.4f}); unit-leaf MPC {unit.value:.4f} vs optimal "
                   f"{unit.bound:.4f} (3 SE = {3 * unit.stderr:.4f}); assumption holds={bool(a1.value)}; "
                   f"{elapsed:.1f}s")


@pytest.mark.slow
def test_5_regret_behavior():
    t0 = time.perf_counter()
    S, A, H, ell, K, delta = 5, 2, 6, 2, 20_000, 0.05
    mdp = build_random_mdp(S, A, H, ell, seed=0, density=2)
    laws = LookaheadLaws(mdp, ExpectationConfig(cap=10 ** 6))
    opt = plan_optimal_abp(mdp, laws=laws)
    cfg = LearnerConfig(delta=delta, K=K, eval_interval=0)
    curves = np.array([[r.regret_realized_cum for r in run_learning(mdp, cfg, seed=seed, optimal=opt, laws=laws)]
                       for seed in range(10)])
    elapsed = time.perf_counter() - t0
    mean = curves.mean(axis=0)
    reg_k, reg_q = mean[K - 1], mean[K // 4 - 1]
    ratio = reg_k / reg_q
    growth = (reg_k / math.sqrt(K)) / (reg_q / math.sqrt(K // 4))
    c = reg_k / math.sqrt(H ** 3 * S * K * ell * math.log(S * H * ell * K / delta))
    ok = ratio <= 3 and growth <= 1.25 and elapsed <= 1800
    verdict(5, ok, f"Reg(K)={reg_k:.1f}, Reg(K/4)={reg_q:.1f}, ratio {ratio:.3f} (<= 3); "
                   f"Reg/sqrt(K) growth {growth:.3f} (<= 1.25); fitted c = {c:.4f} (informational); "
                   f"exact V*={laws.all_exact}; {elapsed:.0f}s")


def test_6_optimism():
    mdp = build_random_mdp(3, 2, 3, 2, seed=11, density=2)
    laws = LookaheadLaws(mdp)
    opt = plan_optimal_abp(mdp, laws=laws)
    clean = 0
    worst = math.inf
    for seed in range(10):
        gaps = []

        def check(k, tables, trace):
            gaps.extend(tables.V[h - 1, s] - opt.value.V[h - 1, s] for h, s, _ in trace.batches)

        run_learning(mdp, LearnerConfig(delta=0.05, K=2000, eval_interval=0), seed=seed, optimal=opt, laws=laws,
                     on_episode=check)
        worst = min(worst, min(gaps))
        clean += min(gaps) >= -1e-9
    verdict(6, clean >= 8 and laws.all_exact,
            f"{clean}/10 runs without violation (>= 8); min over runs of Vbar - V* = {worst:.3e}")


def test_7_law_of_total_variance():
    mdp = build_random_mdp(3, 2, 4, 2, seed=3, density=2)
    laws = LookaheadLaws(mdp)
    pol = plan_optimal_abp(mdp, laws=laws)
    V = pol.value.V
    n = 100_000
    returns = np.empty(n)
    batch_var = np.empty(n)
    for k in range(n):
        trace = play_batches(mdp, pol.batch, V, sample_episode(mdp, episode_rng(17, k + 1)))
        returns[k] = trace.total
        batch_var[k] = sum(laws(h, s, B).moments(V[h - 1 + B])[1] for h, s, B in trace.batches)
    var_g = returns.var(ddof=1)
    centered = returns - returns.mean()
    se_var = math.sqrt(max(np.mean(centered ** 4) - var_g ** 2, 0.0) / n)
    se_sum = batch_var.std(ddof=1) / math.sqrt(n)
    gap = abs(batch_var.mean() - var_g)
    tol = 3 * math.hypot(se_var, se_sum)
    H2 = mdp.H ** 2
    ok = gap <= tol and var_g <= H2 and batch_var.mean() <= H2 and laws.all_exact
    verdict(7, ok, f"sum E[batch var] {batch_var.mean():.5f} vs Var(return) {var_g:.5f}, |gap| {gap:.5f} "
                   f"(<= 3 SE = {tol:.5f}); both <= H^2 = {H2}")


def test_8_degenerate_bonus_equivalence():
    worst = 0.0
    mdps = [build_random_mdp(3, 2, 4, 2, seed=s, density=2) for s in range(5)]
    mdps += [build_correlated_mdp(4, 2, 4, 2, seed=s) for s in range(5)]
    for mdp in mdps:
        laws = LookaheadLaws(mdp)
        V = plan_optimal_abp(mdp, laws=laws).value.V
        t = compute_optimistic_tables(LawStore(laws), mdp, 1, 0.05, bonus_fn=lambda var, n, H, L: 0.0)
        worst = max(worst, float(np.max(np.abs(t.V - V))))
    verdict(8, worst <= 1e-9, f"{len(mdps)} MDPs, max |Vbar - V*| = {worst:.2e} (<= 1e-9)")


def test_9_end_to_end_cli(tmp_path, capsys):
    notes = []
    claims = [tmp_path / "c1.csv", tmp_path / "c2.csv"]
    codes = [main(["claims", "--A", "2", "--ell", "4", "--out", str(p)]) for p in claims]
    lines = claims[0].read_text().splitlines()
    all_pass = codes == [0, 0] and len(lines) > 1 and all(line.endswith(",pass") for line in lines[1:])
    claims_same = claims[0].read_bytes() == claims[1].read_bytes()
    notes.append(f"claims rows {len(lines) - 1} all pass={all_pass}")

    flags = ["--env", "random", "--S", "4", "--H", "4", "--ell", "2", "--K", "200", "--seeds", "3",
             "--eval-interval", "50"]
    runs = []
    for name in ("a", "b"):
        csv_path, svg_path = tmp_path / f"{name}.csv", tmp_path / f"{name}.svg"
        ok = main(["learn", *flags, "--out", str(csv_path)]) == 0
        ok &= main(["plot", "--in", str(csv_path), "--out", str(svg_path), "--sqrt-ref"]) == 0
        runs.append((ok, csv_path, svg_path))
    records = read_regret_csv(open(runs[0][1]))
    root = ET.parse(runs[0][2]).getroot()
    parse_ok = len(records) == 600 and root.tag.endswith("svg") and len(root.findall(".//{*}polyline")) == 4
    summary = json.loads(runs[0][1].with_suffix(".summary.json").read_text())
    same = all(runs[0][i].read_bytes() == runs[1][i].read_bytes() for i in (1, 2))
    same &= (runs[0][1].with_suffix(".summary.json").read_bytes()
             == runs[1][1].with_suffix(".summary.json").read_bytes())
    notes.append(f"learn+plot ok={all(r[0] for r in runs)} parse ok={parse_ok} ({len(records)} rows, "
                 f"mean final regret {summary['final_regret_realized']['mean']:.2f})")
    notes.append(f"byte-identical reruns={same and claims_same}")
    capsys.readouterr()
    verdict(9, all_pass and parse_ok and same and claims_same and all(r[0] for r in runs), "; ".join(notes))


def test_assumption_check_used_by_claims_matches_direct_call():
    from lookahead_lab.envs import build_claim2_tree_and_line
    mdp = build_claim2_tree_and_line(2, 4, 5)
    assert check_assumption1(mdp, MPCAgent.default(mdp).values).ok
