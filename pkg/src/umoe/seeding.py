"""Stable derivation of sub-seeds for nested pipeline stages.

Every stochastic stage (sampling, masking, imputation draws, network
init, epoch shuffling, fold splitting) gets its own seed derived from a
single base seed plus a path of tags. Derivation goes through
``numpy.random.SeedSequence`` so streams are independent and the mapping
is stable across platforms and releases.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(base: int, *tags: int | str) -> int:
    """Return a 64-bit seed determined by ``base`` and the tag path."""
    parts = [int(base) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            parts.append(zlib.crc32(tag.encode("utf-8")))
        else:
            parts.append(int(tag) & 0xFFFFFFFF)
    seq = np.random.SeedSequence(parts)
    return int(seq.generate_state(1, np.uint64)[0])
