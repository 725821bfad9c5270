"""Counter-based seed derivation.

Every random stream is keyed by ``(root, run seed, stream label)`` through
:class:`numpy.random.SeedSequence`, so adding a run seed or a new stream
never changes the draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("train", "eval", "auc")


def _label(stream: str | int) -> int:
    if isinstance(stream, (int, np.integer)):
        return int(stream)
    return zlib.crc32(stream.encode())


def seed_sequence(root: int, seed: int, stream: str | int = "train") -> np.random.SeedSequence:
    if root < 0 or seed < 0:
        raise ValueError("seeds must be nonnegative")
    return np.random.SeedSequence([int(root), int(seed), _label(stream)])


def derive_rng(root: int, seed: int, stream: str | int = "train") -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root, seed, stream))


def derive_seed(root: int, seed: int, stream: str | int = "train") -> int:
    """A plain integer seed (for configs that take an int) from the same derivation."""
    return int(seed_sequence(root, seed, stream).generate_state(1, np.uint32)[0])
