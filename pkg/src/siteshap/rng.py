"""Seed derivation for reproducible, schedule-independent random streams.

Every random draw in the package comes from a generator keyed by the master
seed plus a tuple of integer keys, so the result of a draw never depends on
which worker made it or in what order.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int]]


def _entropy(seed: Seed) -> int | list[int]:
    if isinstance(seed, (int, np.integer)):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        return int(seed)
    return [int(s) for s in seed]


def substream(seed: Seed, *keys: int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=_entropy(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def derive_seed(seed: Seed, *keys: int) -> int:
    """A single 63-bit integer seed derived from ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=_entropy(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def name_hash(names: Iterable[str]) -> int:
    """Stable 128-bit hash of an ordered name list (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("\x1f".join(names).encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "big")


def prefix_seed(master: Seed, prefix: Sequence[str]) -> list[int]:
    """Seed entropy for the fixed resample of an ordered factor prefix."""
    base = _entropy(master)
    base = [base] if isinstance(base, int) else list(base)
    return base + [name_hash(prefix), len(prefix)]
