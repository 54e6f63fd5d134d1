"""Counter-based random streams.

Every stream is a Philox generator whose 128-bit key is derived from the
run seed plus a tuple of integer path components (via ``SeedSequence``) and
whose counter starts at ``index``. Draws for episode ``k`` of a run are
therefore a pure function of ``(seed, path, k)`` and do not depend on how
many other episodes were drawn before, or in which process.

Stream paths used by the package:

* ``(EPISODE,)`` with ``index=k``: the joint realization of episode ``k``;
  within it, step ``h`` consumes one uniform per factor group, in group order.
* ``(LOOKAHEAD, h, s, B)`` with ``index=0``: Monte-Carlo lookahead samples
  used to estimate expectations at batch start ``(h, s)`` with range ``B``.
"""
from __future__ import annotations

import numpy as np

EPISODE = 1
LOOKAHEAD = 2

_MASK64 = (1 << 64) - 1


def _key(seed: int, path: tuple[int, ...]) -> int:
    if seed < 0 or any(p < 0 for p in path):
        raise ValueError("seed and path components must be non-negative")
    words = np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def _at(key: int, index: int) -> np.random.Generator:
    if index < 0:
        raise ValueError("index must be non-negative")
    counter = np.array([0, 0, index & _MASK64, (index >> 64) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def stream(seed: int, *path: int, index: int = 0) -> np.random.Generator:
    """Return the Philox generator for ``(seed, path)`` positioned at ``index``."""
    return _at(_key(seed, path), index)


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    return stream(seed, EPISODE, index=episode)


def episode_uniforms(seed: int, first: int, n: int, size: int) -> np.ndarray:
    """``(n, size)`` uniforms; row ``i`` is the first ``size`` draws of ``episode_rng(seed, first + i)``."""
    key = _key(seed, (EPISODE,))
    out = np.empty((n, size))
    for i in range(n):
        out[i] = _at(key, first + i).random(size)
    return out


def lookahead_rng(seed: int, h: int, s: int, B: int) -> np.random.Generator:
    return stream(seed, LOOKAHEAD, h, s, B)
