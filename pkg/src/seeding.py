"""
seeding.py · named, splittable random streams
---------------------------------------------
Every random draw in the package comes from a numpy ``Generator`` derived
from one master seed plus a tuple of labels, e.g.
``derive_rng(seed, "fict-S")`` or ``derive_rng(seed, "trial", 17)``.
The same (seed, labels) always yields the same stream.
"""

from __future__ import annotations

import zlib
from typing import Tuple, Union

import numpy as np

Label = Union[str, int]


def _spawn_key(labels: Tuple[Label, ...]) -> Tuple[int, ...]:
    key = []
    for label in labels:
        if isinstance(label, int):
            key.append(label)
        else:
            key.append(zlib.crc32(label.encode("utf-8")))
    return tuple(key)


def seed_sequence(seed: int, *labels: Label) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=_spawn_key(labels))


def derive_rng(seed: int, *labels: Label) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *labels))


def derive_seed(seed: int, *labels: Label) -> int:
    """A plain 63-bit integer seed, for handing to code that wants an int."""
    return int(seed_sequence(seed, *labels).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
