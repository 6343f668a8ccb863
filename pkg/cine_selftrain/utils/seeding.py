"""Seed substreams.

All randomness in the toolkit flows from explicit integer seeds. Independent
streams (per subject, per frame, per round) are derived with
:class:`numpy.random.SeedSequence` so that adding or removing one stream never
perturbs the others.
"""

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _entropy(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    if key < 0:
        raise ValueError(f"Seed components must be non-negative, got {key}")
    return int(key)


def substream(seed: int, *keys: Key) -> np.random.Generator:
    """Return a generator for the stream identified by ``(seed, *keys)``.

    String keys (e.g. subject ids) are folded in through their CRC-32, which
    unlike :func:`hash` is stable across interpreter runs.
    """
    entropy = [_entropy(seed)] + [_entropy(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
