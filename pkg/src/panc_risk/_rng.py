"""Named random-stream derivation.

Every random draw in the package comes from a generator built by
:func:`rng_for` out of a root seed plus a tuple of keys (stage name,
fold index, replicate index, ...).  Two calls with the same keys give the
same stream no matter which thread or in which order they run.
"""
import hashlib
import zlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def seed_sequence(seed, *keys):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))


def rng_for(seed, *keys):
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def child_seed(seed, *keys):
    """A 32-bit integer seed for components that take a plain int."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint32)[0])


def stream_fingerprint(seed, *keys):
    state = seed_sequence(seed, *keys).generate_state(4, dtype=np.uint32)
    return hashlib.sha256(state.tobytes()).hexdigest()[:16]
