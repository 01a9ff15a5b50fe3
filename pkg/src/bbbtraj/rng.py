"""Counter-based uniform streams keyed by (seed, purpose, step, trajectory id).

Built on numpy's Philox generator: the key is the user seed and the 256-bit
counter carries the step and the purpose of the draw. Within one (seed, purpose,
step) block, draw number i belongs to trajectory i, so any slice of
trajectories can be regenerated alone and results never depend on how an
ensemble is split into chunks.
"""
from __future__ import annotations

import numpy as np

INITIAL = 0
JUMP = 1
PARTICLES = 2

_WORDS_PER_BLOCK = 4
_U64 = (1 << 64) - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed


def uniforms(seed: int, step: int, count: int, start: int = 0, purpose: int = JUMP) -> np.ndarray:
    """Uniform variates in [0, 1) for trajectories start .. start+count-1."""
    seed = check_seed(seed)
    if step < 0 or start < 0 or count < 0:
        raise ValueError("step, start and count must be nonnegative")
    block, skip = divmod(int(start), _WORDS_PER_BLOCK)
    counter = np.array([block, 0, int(step) & _U64, int(purpose) & _U64], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=seed, counter=counter))
    if skip:
        gen.random(skip)
    return gen.random(int(count))


def normals(seed: int, step: int, count: int, purpose: int = PARTICLES) -> np.ndarray:
    """Standard normal variates from the same keyed stream family (not slice-addressable)."""
    seed = check_seed(seed)
    counter = np.array([0, 1, int(step) & _U64, int(purpose) & _U64], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=seed, counter=counter))
    return gen.standard_normal(int(count))
