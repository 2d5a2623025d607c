"""Counter-based random streams.

Every draw is addressed by ``(seed, stream, step, trajectory)``.  A Philox
generator is keyed by ``(seed, stream, step)`` and its counter is offset by
the trajectory index, so the numbers a trajectory sees do not depend on how
trajectories are chunked or distributed over workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

_WORDS_PER_COUNTER = 4
_TWO_M53 = 2.0**-53


def _key(seed: int, stream: int, step: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed), int(stream), int(step)])
    return ss.generate_state(2, dtype=np.uint64)


def _runs(ids: np.ndarray):
    """Split sorted-or-not trajectory ids into contiguous ascending runs."""
    if ids.size == 0:
        return
    breaks = np.flatnonzero(np.diff(ids) != 1) + 1
    start = 0
    for b in list(breaks) + [ids.size]:
        yield start, int(ids[start]), b - start
        start = b


@dataclass(frozen=True)
class CounterRNG:
    """Stateless stream handle; ``stream`` separates independent purposes."""

    seed: int
    stream: int = 0

    def substream(self, stream: int) -> "CounterRNG":
        return CounterRNG(self.seed, stream)

    def uniforms(self, step: int, trajectories, per_traj: int) -> np.ndarray:
        """Open-interval uniforms of shape ``(len(trajectories), per_traj)``."""
        ids = np.atleast_1d(np.asarray(trajectories, dtype=np.int64))
        blocks = -(-per_traj // _WORDS_PER_COUNTER)
        width = blocks * _WORDS_PER_COUNTER
        key = _key(self.seed, self.stream, step)
        out = np.empty((ids.size, per_traj))
        for pos, first, count in _runs(ids):
            counter = np.array([first * blocks, 0, 0, 0], dtype=np.uint64)
            bitgen = np.random.Philox(key=key, counter=counter)
            raw = bitgen.random_raw(count * width).reshape(count, width)[:, :per_traj]
            out[pos:pos + count] = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
        return out

    def normals(self, step: int, trajectories, per_traj: int) -> np.ndarray:
        return ndtri(self.uniforms(step, trajectories, per_traj))

    def generator(self, step: int = 0) -> np.random.Generator:
        """Sequential numpy generator for bulk work that needs no addressing."""
        return np.random.Generator(np.random.Philox(key=_key(self.seed, self.stream, step)))
