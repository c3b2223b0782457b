"""Deterministic RNG stream derivation.

All parallel work items (units, replicates, searches) get their own
`numpy` Generator derived from the run seed plus string/integer keys, so
results do not depend on scheduling order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stable_hash", "seed_sequence", "derive_rng", "derive_unit_rng", "mix_seed"]


def stable_hash(key: str) -> int:
    """64-bit hash of a string, stable across processes and sessions."""
    digest = hashlib.blake2b(key.encode("utf8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def seed_sequence(seed: int, *keys: int | str) -> np.random.SeedSequence:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        entropy.append(stable_hash(k) if isinstance(k, str) else int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.SeedSequence(entropy)


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator keyed by (seed, *keys); equal keys give equal streams."""
    return np.random.default_rng(seed_sequence(seed, *keys))


def derive_unit_rng(seed: int, unit_id: str, replicate: int) -> np.random.Generator:
    """Stream used for one particle-filter replicate of one panel unit."""
    return derive_rng(seed, "unit", unit_id, replicate)


def mix_seed(seed: int, *keys: int | str) -> int:
    """Collapse (seed, *keys) into a single derived integer seed."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)[0])
