import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from lookahead_lab.envs import build_correlated_mdp, build_random_mdp  # noqa: E402
from lookahead_lab.mdp import FactorGroup, StepLaw, TabularMDP  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def deterministic_mdp(R, N, ell=1):
    """MDP from nested ``R[h][s][a]`` and ``N[h][s][a]`` lists."""
    R, N = np.asarray(R, dtype=float), np.asarray(N, dtype=np.int64)
    H, S, A = R.shape
    cells = [(s, a) for s in range(S) for a in range(A)]
    laws = [StepLaw(h + 1, [FactorGroup.deterministic(cells, [R[h, s, a] for s, a in cells],
                                                      [N[h, s, a] for s, a in cells])])
            for h in range(H)]
    return TabularMDP(S, A, H, ell, laws)


@st.composite
def tiny_mdps(draw, max_S=4, max_A=2, max_H=4, max_ell=2, max_outcomes=3):
    S = draw(st.integers(1, max_S))
    A = draw(st.integers(1, max_A))
    H = draw(st.integers(1, max_H))
    ell = draw(st.integers(1, min(max_ell, H)))
    seed = draw(st.integers(0, 2 ** 31 - 1))
    return build_correlated_mdp(S, A, H, ell, seed, max_outcomes)


@st.composite
def random_mdps(draw, max_S=4, max_A=2, max_H=4, max_ell=3):
    S = draw(st.integers(1, max_S))
    A = draw(st.integers(1, max_A))
    H = draw(st.integers(1, max_H))
    ell = draw(st.integers(1, min(max_ell, H)))
    density = draw(st.integers(1, min(2, S)))
    return build_random_mdp(S, A, H, ell, draw(st.integers(0, 2 ** 31 - 1)), density)


@pytest.fixture
def small_random():
    return build_random_mdp(3, 2, 3, 2, seed=11, density=2)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
