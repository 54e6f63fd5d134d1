"""Input validation helpers shared by the public API."""
from __future__ import annotations

import numbers

import numpy as np


class EnumerationInfeasible(RuntimeError):
    """Raised when exact enumeration would exceed the configured cap."""


class OracleInfeasible(RuntimeError):
    """Raised when the augmented-MDP oracle is asked to solve a too-large instance."""


def check_int(value, name: str, *, low: int | None = None, high: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if low is not None and value < low:
        raise ValueError(f"{name} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise ValueError(f"{name} must be <= {high}, got {value}")
    return value


def check_step(mdp, h) -> int:
    return check_int(h, "h", low=1, high=mdp.H)


def check_state(mdp, s, name: str = "s") -> int:
    return check_int(s, name, low=0, high=mdp.S - 1)


def check_action(mdp, a) -> int:
    return check_int(a, "a", low=0, high=mdp.A - 1)


def check_batch(mdp, h, B) -> int:
    h = check_step(mdp, h)
    return check_int(B, "B", low=1, high=mdp.effective_lookahead(h))


def check_probability(delta, name: str = "delta") -> float:
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {delta}")
    return delta


def check_value_vector(mdp, V, name: str = "V") -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.shape != (mdp.S,):
        raise ValueError(f"{name} must have shape ({mdp.S},), got {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError(f"{name} must be finite")
    return V
