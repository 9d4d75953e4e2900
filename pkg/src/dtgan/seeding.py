"""Stream splitting from one master seed.

``stream(seed, "train", "latent")`` always yields the same generator, and
distinct name paths yield independent ones (numpy ``SeedSequence`` spawn
keys built from CRC-32 of each name).
"""
import zlib

import numpy as np


def _key(names):
    return tuple(zlib.crc32(str(n).encode()) for n in names)


def stream(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=_key(names)))


def subseed(seed: int, *names) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=_key(names)).generate_state(1)[0])
