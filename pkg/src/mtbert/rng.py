"""Named, reproducible random streams.

All randomness flows from one integer seed. A stream is addressed by a path of
names/ints (``stream(seed, "gan", "noise", run)``) and backed by a Philox
counter-based bit generator, so streams never overlap and the same path always
yields the same draws regardless of what other streams consumed.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
