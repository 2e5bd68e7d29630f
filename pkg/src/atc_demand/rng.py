"""Named random sub-streams derived from one integer seed."""

import zlib

import numpy as np


def substream(seed: int, *names) -> np.random.Generator:
    """Return a generator for the sub-stream ``names`` of ``seed``.

    Names may be strings or integers; the same (seed, names) always yield the
    same stream, and distinct names yield statistically independent streams.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for name in names:
        if isinstance(name, str):
            words.append(zlib.crc32(name.encode("utf-8")))
        else:
            words.append(int(name) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))
