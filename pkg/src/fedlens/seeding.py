"""Deterministic RNG stream derivation.

A single global seed drives every random choice in a run. Each purpose
(weight init, per-client shuffling, partitioning, trigger selection, ...)
gets its own stream derived from ``(seed, purpose, *indices)`` so that
changing one experiment factor never perturbs the streams of another.
Sweeps reuse the same global seed for every swept value for the same reason.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. These values are part of the reproducibility contract:
# changing them changes every derived stream.
WEIGHT_INIT = 0
SERVER_SHUFFLE = 1
CLIENT_SHUFFLE = 2  # indices: (client_id, round_index)
PARTITION = 3
TRIGGER = 4  # indices: (client_id,)
SYNTHETIC = 5
GRADCHECK = 6


def derive_seed(seed: int, purpose: int, *indices: int) -> int:
    """Fold (seed, purpose, indices) into a single uint64 stream seed."""
    ss = np.random.SeedSequence((int(seed), int(purpose), *[int(i) for i in indices]))
    return int(ss.generate_state(1, np.uint64)[0])


def stream(seed: int, purpose: int, *indices: int) -> np.random.Generator:
    """Return the generator for one purpose-specific stream."""
    return np.random.default_rng(derive_seed(seed, purpose, *indices))
