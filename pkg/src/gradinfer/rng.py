"""Labeled random streams derived from one master seed.

Every consumer of randomness asks for a stream by a path of labels, e.g.
``stream(seed, "trial", 17, "round", 3)``. Paths are hashed into a
``SeedSequence`` spawn key and fed to a Philox (counter-based) generator, so
the draws for one path never depend on how many other paths were requested
or in which order. That is what keeps results independent of worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(label: int | str) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer stream labels must be nonnegative")
        return int(label) & 0xFFFFFFFF
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seed_sequence(seed: int, *labels: int | str) -> np.random.SeedSequence:
    """Return the seed sequence for the stream at ``labels`` under ``seed``."""
    # Strings and ints hash to disjoint tags so ("a", 1) never aliases (1, "a").
    key = []
    for label in labels:
        key.append(1 if isinstance(label, str) else 0)
        key.append(_label_key(label))
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key))


def stream(seed: int, *labels: int | str) -> np.random.Generator:
    """Return an independent generator for the labeled path."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *labels)))


def child_seed(seed: int, *labels: int | str) -> int:
    """Derive a plain 63-bit integer seed for APIs that want an int."""
    return int(seed_sequence(seed, *labels).generate_state(2, np.uint64)[0] >> np.uint64(1))
