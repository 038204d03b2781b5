"""Deterministic random number streams.

Every stochastic routine in the package draws from a counter-based
generator keyed by a master seed plus a tuple of task tags (for example
``(task_index, replicate)``).  Streams derived this way are independent of
worker count and scheduling order, which is what makes batch runs
reproducible under any level of parallelism.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_u64(tag) -> int:
    """Map an arbitrary tag to a stable 64-bit integer.

    Uses SHA-256 rather than ``hash()`` so the value does not depend on
    interpreter hash randomization.
    """
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    data = repr(tag).encode("utf-8")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Return a Generator for the stream identified by ``(seed, *tags)``.

    The same arguments always produce the same stream, on any platform,
    regardless of how many other streams were created before it.
    """
    entropy = [_tag_to_u64(seed)] + [_tag_to_u64(t) for t in tags]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
