"""Seeded, splittable random streams.

Every stream is a Philox-4x64-10 counter-based generator whose 128-bit key is
the first 16 bytes (little-endian) of ``SHA-256(f"{seed}:{path}")``. Streams
for different paths are independent, and a given ``(seed, path)`` yields the
same values on every platform and in every run.
"""

import hashlib

import numpy as np


def derive_key(seed: int, path: str = "") -> np.ndarray:
    digest = hashlib.sha256(f"{int(seed)}:{path}".encode()).digest()
    return np.frombuffer(digest[:16], dtype="<u8").astype(np.uint64)


def stream(seed: int, path: str = "") -> np.random.Generator:
    """Generator for the named stream ``path`` under ``seed``."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, path)))
