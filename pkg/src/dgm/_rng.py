"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by up
to two nonnegative integer words, so regeneration is bit-identical and
independent of evaluation order.
"""

from __future__ import annotations

import numpy as np


def stream(*words: int) -> np.random.Generator:
    """A Philox generator keyed by up to two integer words."""
    if not 1 <= len(words) <= 2:
        raise ValueError("stream takes one or two key words")
    key = np.zeros(2, dtype=np.uint64)
    for i, w in enumerate(words):
        key[i] = np.uint64(int(w) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.Philox(key=key))
