"""Deterministic per-replica seeding.

Replica k of a run with master seed s always receives the same child
seed, independent of execution order or thread count, via the
counter-based SeedSequence spawn (master, replica-index) -> uint32.
"""

import numpy as np

__all__ = ["replica_seeds", "generator"]


def replica_seeds(master_seed, n, stream=0):
    """n uint32 child seeds derived from (master_seed, stream)."""
    ss = np.random.SeedSequence([int(master_seed), int(stream)])
    return ss.generate_state(n, dtype=np.uint32)


def generator(master_seed, stream=0):
    """numpy Generator keyed by (master_seed, stream)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(stream)]))
