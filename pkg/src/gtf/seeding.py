"""Deterministic random streams derived from one root seed.

Every consumer asks for ``derive_rng(root, tag, index)``; the stream depends
only on those three values, so results do not change with execution order
or parallelism.
"""

from __future__ import annotations

import zlib

import numpy as np


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_rng(root: int, tag: str, index: int = 0) -> np.random.Generator:
    if root < 0 or index < 0:
        raise ValueError("seed components must be non-negative")
    return np.random.default_rng([int(root), tag_id(tag), int(index)])
