"""Deterministic sub-seed derivation.

Every random draw in the pipeline takes its seed from ``subseed`` so that
results depend only on the run seed and the stage's own coordinates, never
on call order.
"""
import hashlib

import numpy as np


def subseed(seed: int, *keys) -> int:
    """Derive a 63-bit seed from ``seed`` and an ordered key path."""
    h = hashlib.sha256(str(int(seed)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big") >> 1


def rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(subseed(seed, *keys) if keys else int(seed))
