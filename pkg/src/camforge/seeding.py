"""Deterministic seed derivation shared by every randomized component.

Seeds are derived by hashing a tag tuple, so independent streams (scenes,
synthetics, batches, ...) never collide even when built from the same
top-level experiment seed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Collapse a tuple of strings/ints into a stable 63-bit seed."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def seeded_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
