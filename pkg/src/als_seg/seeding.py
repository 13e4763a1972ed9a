"""Deterministic sub-seed derivation.

Every random component of a run (initial pool draw, learner init, batch
schedules, GAN init) gets its own seed derived from the single root seed
plus a scope label, so components never share a stream and runs replay
bit-identically.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, *scope: object) -> int:
    """Hash (root_seed, scope...) into a stable non-negative 63-bit seed."""
    key = ":".join([str(int(root_seed))] + [str(part) for part in scope])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def derived_rng(root_seed: int, *scope: object) -> np.random.Generator:
    """Fresh numpy generator seeded by :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(root_seed, *scope))
