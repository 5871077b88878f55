"""Root-seed plumbing: every random draw comes from a named sub-stream."""

from __future__ import annotations

import numpy as np

from .errors import UsageError

# Fixed ids keep streams stable across releases (never reuse or reorder).
STREAM_IDS = {
    "data": 1,
    "init": 2,
    "train": 3,
    "rl": 4,
    "eval": 5,
    "reward": 6,
}


def stream_rng(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for (seed, stream name, optional indices)."""
    sid = STREAM_IDS.get(name)
    if sid is None:
        raise UsageError(f"unknown rng stream {name!r}")
    return np.random.default_rng(
        np.random.SeedSequence((int(seed), sid) + tuple(int(e) for e in extra))
    )
