"""Named, splittable random streams.

Every consumer of randomness derives its own Philox generator from the root
seed plus a tuple of labels, so adding or removing a consumer never shifts the
numbers another one sees.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_to_int(label: int | str) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream labels must be non-negative, got {label}")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def stream(root_seed: int, *labels: int | str) -> np.random.Generator:
    """Return an independent counter-based generator for ``(root_seed, *labels)``."""
    key = tuple(_label_to_int(lab) for lab in labels)
    seq = np.random.SeedSequence(int(root_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else int(rng))
