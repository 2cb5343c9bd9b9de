"""Deterministic RNG derivation: one root seed, stable per-component streams.

Component names are hashed with SHA-256 (not Python's randomized ``hash``)
so the same (root, name) pair yields the same stream on any machine or run.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_words(name: str) -> tuple[int, ...]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def seed_sequence(root: int, name: str, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root), *_name_words(name), *extra])


def rng(root: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for component `name`, optionally sub-keyed (e.g. by epoch)."""
    return np.random.default_rng(seed_sequence(root, name, *extra))


def spawn_seed(root: int, name: str, *extra: int) -> int:
    """A plain integer seed derived from (root, name), for APIs that take one."""
    state = seed_sequence(root, name, *extra).generate_state(2)
    return int(state[0]) << 32 | int(state[1])
