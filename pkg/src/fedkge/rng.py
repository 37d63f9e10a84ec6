"""Deterministic RNG substreams.

All randomness in a run is derived from one root seed through labeled
substreams, so every component (split, init, negatives, secagg, ...) draws
from an independent, reproducible stream.
"""

import hashlib

import numpy as np


def _label_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2s(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(root_seed: int, *labels) -> np.random.Generator:
    """Generator keyed by (root_seed, labels); same inputs, same stream."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + [_label_int(x) for x in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def substream_seed(root_seed: int, *labels) -> int:
    """64-bit seed derived from (root_seed, labels), for handing to others."""
    return int(substream(root_seed, *labels).integers(0, 2**63))
