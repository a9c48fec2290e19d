"""Seeded random streams.

Every random draw in oodkit comes from numpy's PCG64 generator. Independent
purposes (tree construction, dropout masks, data generation, ...) get their
own substream whose seed is the first 8 bytes (little-endian) of
``sha256(f"{master_seed}:{tag}")``, so adding a new consumer never perturbs
the draws of an existing one.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{int(master_seed)}:{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, tag: str) -> np.random.Generator:
    """Return a fresh PCG64 generator for ``(master_seed, tag)``."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, tag)))
