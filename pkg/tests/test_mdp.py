import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import deterministic_mdp, random_mdps, tiny_mdps
from lookahead_lab.mdp import (
    EpisodeRealization,
    FactorGroup,
    StepLaw,
    TabularMDP,
    dumps_mdp,
    episode_tables,
    load_mdp,
    marginal_law,
    mdp_from_dict,
    n_uniforms,
    sample_episode,
    save_mdp,
    step,
    validate_mdp,
)
from lookahead_lab.rng import episode_rng, episode_uniforms, lookahead_rng, stream
from oracles import marginal_tables


def two_cell_mdp(weights=(0.3, 0.7)):
    g = FactorGroup.from_outcomes([(0, 0), (0, 1)], [(weights[0], [1.0, 0.0], [0, 1]),
                                                      (weights[1], [0.0, 1.0], [1, 0])])
    g2 = FactorGroup.deterministic([(1, 0), (1, 1)], [0.5, 0.0], [1, 1])
    return TabularMDP(2, 2, 1, 1, [StepLaw(1, [g, g2])])


def test_valid_mdp_reports_ok():
    assert validate_mdp(two_cell_mdp()).ok


@pytest.mark.parametrize("mutate, kind", [
    (lambda: TabularMDP(2, 2, 1, 2, [StepLaw(1, [FactorGroup.deterministic([(0, 0)], [0], [0])])]), "dimensions"),
    (lambda: TabularMDP(2, 2, 2, 1, [two_cell_mdp().laws[0]]), "laws"),
    (lambda: two_cell_mdp((0.3, 0.6)), "weights"),
    (lambda: TabularMDP(2, 2, 1, 1, [StepLaw(1, [FactorGroup.deterministic([(0, 0), (0, 1), (1, 0)], [0, 0, 0],
                                                                          [0, 0, 0])])]), "cover"),
    (lambda: TabularMDP(1, 1, 1, 1, [StepLaw(1, [FactorGroup.deterministic([(0, 0)], [0], [0]),
                                                 FactorGroup.deterministic([(0, 0)], [0], [0])])]), "overlap"),
    (lambda: TabularMDP(1, 1, 1, 1, [StepLaw(1, [FactorGroup.deterministic([(0, 0)], [1.5], [0])])]),
     "reward_table"),
    (lambda: TabularMDP(1, 1, 1, 1, [StepLaw(1, [FactorGroup.deterministic([(0, 0)], [0.5], [3])])]),
     "next_table"),
    (lambda: TabularMDP(1, 2, 1, 1, [StepLaw(1, [FactorGroup.deterministic([(0, 0), (0, 5)], [0, 0], [0, 0])])]),
     "cells"),
])
def test_validation_kinds(mutate, kind):
    report = validate_mdp(mutate())
    assert not report.ok and report.kind == kind


def test_invalid_mdp_cannot_be_sampled():
    with pytest.raises(ValueError, match="weights"):
        sample_episode(two_cell_mdp((0.3, 0.6)), np.random.default_rng(0))


def test_marginal_law_matches_weights():
    r, p = marginal_law(two_cell_mdp(), 1, 0, 0)
    assert r == pytest.approx(0.3)
    np.testing.assert_allclose(p, [0.3, 0.7])


@given(random_mdps())
def test_marginals_match_independent_tables(mdp):
    r, P = mdp.marginals
    r2, P2 = marginal_tables(mdp)
    np.testing.assert_allclose(r, r2, atol=1e-12)
    np.testing.assert_allclose(P, P2, atol=1e-12)
    np.testing.assert_allclose(P.sum(-1), 1.0, atol=1e-12)


def test_correlated_group_outcomes_are_joint():
    mdp = two_cell_mdp()
    for k in range(200):
        real = sample_episode(mdp, episode_rng(1, k))
        r0, _ = step(mdp, real, 1, 0, 0)
        r1, _ = step(mdp, real, 1, 0, 1)
        assert r0 + r1 == 1.0


def test_sampling_frequency_matches_weights():
    mdp = two_cell_mdp((0.25, 0.75))
    hits = np.mean([sample_episode(mdp, episode_rng(3, k)).rewards[0, 0, 0] for k in range(4000)])
    assert abs(hits - 0.25) < 3 * np.sqrt(0.25 * 0.75 / 4000)


@given(random_mdps(), st.integers(0, 1000))
def test_batched_tables_equal_sequential_sampling(mdp, seed):
    R, N = episode_tables(mdp, episode_uniforms(seed, 5, 3, n_uniforms(mdp)))
    for i in range(3):
        real = sample_episode(mdp, episode_rng(seed, 5 + i))
        np.testing.assert_array_equal(R[i], real.rewards)
        np.testing.assert_array_equal(N[i], real.nexts)


def test_realization_from_outcomes_rejects_bad_indices():
    mdp = two_cell_mdp()
    real = EpisodeRealization.from_outcomes(mdp, [[1, 0]])
    assert step(mdp, real, 1, 0, 1) == (1.0, 0)
    with pytest.raises(ValueError):
        EpisodeRealization.from_outcomes(mdp, [[2, 0]])


def test_step_validates_arguments():
    mdp = two_cell_mdp()
    real = sample_episode(mdp, episode_rng(0, 0))
    with pytest.raises(ValueError):
        step(mdp, real, 2, 0, 0)
    with pytest.raises(ValueError):
        step(mdp, real, 1, 0, 2)


def test_effective_lookahead_near_horizon():
    mdp = deterministic_mdp(np.zeros((4, 1, 1)), np.zeros((4, 1, 1), dtype=int), ell=3)
    assert [mdp.effective_lookahead(h) for h in range(1, 5)] == [3, 3, 2, 1]


@given(tiny_mdps())
def test_json_round_trip_is_byte_stable(mdp):
    text = dumps_mdp(mdp)
    again = mdp_from_dict(json.loads(text))
    assert dumps_mdp(again) == text
    np.testing.assert_array_equal(again.marginals[1], mdp.marginals[1])


def test_json_file_round_trip(tmp_path):
    mdp = two_cell_mdp()
    save_mdp(mdp, tmp_path / "m.json")
    assert dumps_mdp(load_mdp(tmp_path / "m.json")) == dumps_mdp(mdp)


def test_json_unknown_key_rejected():
    doc = json.loads(dumps_mdp(two_cell_mdp()))
    doc["extra"] = 1
    with pytest.raises(ValueError, match="extra"):
        mdp_from_dict(doc)


def test_streams_are_counter_based():
    a = stream(7, 1, index=5).random(4)
    b = stream(7, 1, index=5).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, stream(7, 1, index=6).random(4))
    assert not np.array_equal(a, stream(8, 1, index=5).random(4))
    assert not np.array_equal(episode_rng(0, 1).random(3), lookahead_rng(0, 1, 0, 1).random(3))
    with pytest.raises(ValueError):
        stream(-1)


def test_bernoulli_group_frequency():
    mdp = TabularMDP(1, 1, 1, 1, [StepLaw(1, [FactorGroup.bernoulli((0, 0), 0.5, 0)])])
    R, _ = episode_tables(mdp, episode_uniforms(0, 1, 100_000, n_uniforms(mdp)))
    assert abs(R[:, 0, 0, 0].mean() - 0.5) <= 0.01
