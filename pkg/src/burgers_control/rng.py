"""Counter-based random streams with per-path substream derivation.

Every consumer of randomness derives an independent Philox generator from
(master_seed, stream, index), so ensembles are reproducible path by path and
embarrassingly parallel: a path's draws never depend on scheduling.
"""

from __future__ import annotations

import numpy as np

GAUSSIAN_STREAM = 0
JUMP_STREAM = 1


def substream(master_seed: int, stream: int, index: int) -> np.random.Generator:
    """Generator for substream (stream, index) of a master seed."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(stream, index))
    return np.random.Generator(np.random.Philox(ss))
