"""Seed splitting.

A sub-seed is the BLAKE2b-64 digest (BLAKE2b with ``digest_size=8``) of the
UTF-8 string ``"<global seed>:<purpose>"``, read as a little-endian unsigned
64-bit integer. Any purpose string therefore maps to a stable 64-bit seed. Streams are numpy ``Generator`` objects on PCG64.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, purpose: str) -> int:
    h = hashlib.blake2b(f"{int(seed)}:{purpose}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, purpose: str | None = None) -> np.random.Generator:
    s = int(seed) if purpose is None else derive_seed(seed, purpose)
    return np.random.Generator(np.random.PCG64(s))
