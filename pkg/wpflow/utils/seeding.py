"""
Seed derivation
Every random stream is a child of the master seed keyed by (label, index)
"""

import hashlib
from typing import Sequence

import numpy as np


def label_code(label: str) -> int:
    """Stable 32-bit code of a stream label"""
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:4], "big")


def seed_sequence(master_seed: int, label: str, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(label_code(label), index))


def derive_rng(master_seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Generator for chunk `index` of stream `label`"""
    return np.random.default_rng(seed_sequence(master_seed, label, index))


def derive_seed(master_seed: int, label: str, index: int = 0) -> int:
    """Integer child seed, for APIs that want a plain int"""
    return int(seed_sequence(master_seed, label, index).generate_state(1, dtype=np.uint64)[0] >> 1)


def chunk_sizes(n: int, chunk_size: int) -> Sequence[int]:
    """Split n samples into fixed-size chunks; the last one may be short"""
    if n <= 0:
        return []
    full, rest = divmod(n, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])
