"""Seeded random streams.

All randomness in a run flows from one integer seed. Components draw from
named substreams so that, e.g., data shuffling and dropout masks can be pinned
independently in tests. Substream derivation is stable across processes and
platforms (no reliance on Python hash randomization).
"""

from __future__ import annotations

import hashlib

import numpy as np


def _stream_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator for the named substream of `seed`."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _stream_key(name)]))
