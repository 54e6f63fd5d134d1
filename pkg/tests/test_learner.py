import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import random_mdps, tiny_mdps
from lookahead_lab.envs import build_random_mdp
from lookahead_lab.learner import (
    ALUCB,
    LawStore,
    LearnerConfig,
    RegretRecord,
    SampleStore,
    bonus,
    compute_optimistic_tables,
    empirical_stats,
    log_term,
    read_regret_csv,
    regret_csv,
    run_learning,
)
from lookahead_lab.lookahead import compute_summary, extract_lookahead, q_star
from lookahead_lab.mdp import sample_episode
from lookahead_lab.planner import LookaheadLaws, evaluate_abp, plan_optimal_abp
from lookahead_lab.rng import episode_rng


def zero_bonus(var, n, H, L):
    return 0.0


def test_log_term_frozen():
    # 18 * S * H * ell * k^3 * (k + 1) / delta = 2880 for S=2, H=2, ell=1, k=1, delta=0.05
    assert log_term(1, 0.05, 2, 2, 1) == pytest.approx(7.965545573129992, abs=1e-12)
    assert log_term(10, 0.05, 2, 2, 1) == pytest.approx(math.log(18 * 4 * 1000 * 11 / 0.05), abs=1e-12)
    with pytest.raises(ValueError):
        log_term(1, 1.5, 2, 2, 1)
    with pytest.raises(ValueError):
        log_term(0, 0.05, 2, 2, 1)


@given(st.floats(0, 4), st.integers(0, 10_000), st.integers(1, 8), st.floats(1, 40))
def test_bonus_formula_and_monotonicity(var, n, H, L):
    m = max(n, 1)
    assert bonus(var, n, H, L) == pytest.approx(math.sqrt(8 * var * L / m) + 11 * H * L / m)
    assert bonus(var, n + 1, H, L) <= bonus(var, n, H, L) + 1e-12
    assert bonus(var, math.inf, H, L) == 0.0


def test_sample_store_statistics(small_random):
    mdp = small_random
    store = SampleStore(mdp.S)
    qs = []
    V = np.array([0.1, 0.7, 0.3])
    for k in range(50):
        info = extract_lookahead(mdp, sample_episode(mdp, episode_rng(2, k)), 1, 0, 2)
        summary = compute_summary(info)
        store.add(summary)
        qs.append(q_star(summary, V))
    assert store.count(1, 0, 2) == 50 and store.total == 50 and store.keys() == [(1, 0, 2)]
    mean, var = empirical_stats(store, 1, 0, 2, V)
    assert mean == pytest.approx(np.mean(qs), abs=1e-12)
    assert var == pytest.approx(np.var(qs), abs=1e-12)
    assert empirical_stats(store, 2, 0, 1, V) == (0.0, 0.0)
    assert [q_star(s, V) for s in store.summaries(1, 0, 2)] == qs


def test_empty_store_gives_clipped_tables(small_random):
    t = compute_optimistic_tables(SampleStore(3), small_random, 1, 0.05)
    H = small_random.H
    for h in range(1, H + 1):
        assert np.all(t.V[h - 1] == H - h + 1)
        assert np.all(t.B[h - 1] == 1)
    assert np.isnan(t.Q[H - 1, 0, 1])


@given(tiny_mdps(max_H=3))
@settings(max_examples=25)
def test_zero_bonus_with_true_law_recovers_planner(mdp):
    laws = LookaheadLaws(mdp)
    pol = plan_optimal_abp(mdp, laws=laws)
    for fn in (zero_bonus, bonus):
        t = compute_optimistic_tables(LawStore(laws), mdp, 7, 0.05, bonus_fn=fn)
        np.testing.assert_allclose(t.V, pol.value.V, atol=1e-9)
        np.testing.assert_array_equal(t.B, pol.B)


@given(random_mdps(max_S=3, max_H=3), st.integers(0, 100))
@settings(max_examples=15)
def test_optimism_on_every_visited_state(mdp, seed):
    pol = plan_optimal_abp(mdp)
    bad = []

    def check(k, tables, trace):
        for h, s, _ in trace.batches:
            if tables.V[h - 1, s] < pol.value.V[h - 1, s] - 1e-9:
                bad.append((k, h, s))

    run_learning(mdp, LearnerConfig(K=60, eval_interval=0), seed=seed, optimal=pol, on_episode=check)
    assert not bad


@given(random_mdps(max_S=3, max_H=3), st.integers(0, 50))
@settings(max_examples=15)
def test_tables_are_clipped_and_dominate_their_policy(mdp, seed):
    store = SampleStore(mdp.S)
    run_learning(mdp, LearnerConfig(K=15, eval_interval=0), seed=seed, store=store)
    t = compute_optimistic_tables(store, mdp, 16, 0.05)
    for h in range(1, mdp.H + 1):
        assert np.nanmax(t.Q[h - 1]) <= mdp.H - h + 1
    np.testing.assert_array_less(evaluate_abp(mdp, t.policy()).V, t.V + 1e-9)


def test_learning_is_deterministic_and_records_are_consistent(small_random):
    cfg = LearnerConfig(K=40, eval_interval=10)
    a = run_learning(small_random, cfg, seed=3)
    b = run_learning(small_random, cfg, seed=3)
    assert regret_csv(a) == regret_csv(b)
    assert regret_csv(a) != regret_csv(run_learning(small_random, cfg, seed=4))
    cum = np.cumsum([r.v_opt - r.realized_return for r in a])
    np.testing.assert_allclose([r.regret_realized_cum for r in a], cum, atol=1e-12)
    evaluated = [r for r in a if r.v_pi_exact is not None]
    assert [r.episode for r in evaluated] == [10, 20, 30, 40]
    assert all(r.v_pi_exact <= r.v_opt + 1e-12 for r in evaluated)
    assert all(r.regret_expected_cum >= -1e-12 for r in evaluated)


def test_initial_state_sources(small_random):
    cfg = LearnerConfig(K=6, eval_interval=0)
    assert [r.initial_state for r in run_learning(small_random, cfg, [2, 0])] == [2, 0, 2, 0, 2, 0]
    assert {r.initial_state for r in run_learning(small_random, cfg, 1)} == {1}
    with pytest.raises(ValueError):
        run_learning(small_random, cfg, 9)


def test_csv_round_trip_and_errors():
    recs = [RegretRecord(0, 1, 0, 0.5, 1.25, 0.75), RegretRecord(0, 2, 0, 1 / 3, 1.25, 1.6666666666666667, 1.0, 0.5)]
    text = regret_csv(recs)
    assert text.splitlines()[0] == ",".join(RegretRecord.COLUMNS)
    assert text.splitlines()[1].endswith(",,")
    assert regret_csv(read_regret_csv(io.StringIO(text))) == text
    with pytest.raises(ValueError, match="line 4"):
        read_regret_csv(io.StringIO(text + "0,x,0,1,1,1,,\n"))
    with pytest.raises(ValueError, match="line 1"):
        read_regret_csv(io.StringIO("a,b\n"))


def test_estimator_front_end():
    mdp = build_random_mdp(3, 2, 3, 2, seed=1)
    est = ALUCB(K=30, seed=2)
    assert clone(est).get_params() == est.get_params()
    est.fit(mdp)
    assert len(est.records_) == 30 and est.cumulative_regret_.shape == (30,)
    assert est.store_.total >= 30
    assert est.predict([0, 1, 2]).shape == (3,)
    assert regret_csv(est.records_) == regret_csv(run_learning(mdp, LearnerConfig(K=30, eval_interval=0), 0, 2))


def test_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(delta=0.0)
    with pytest.raises(ValueError):
        LearnerConfig(K=0)
