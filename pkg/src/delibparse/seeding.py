"""Deterministic seed derivation so every random stream is replayable."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *tags) -> int:
    """Map a root seed plus string/int tags to a stable 63-bit seed."""
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


def rng_for(root: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *tags))
