"""Named, independent random streams derived from one root seed.

Every stochastic component (partitioning, participant selection, batch
shuffling, head-ensemble sampling, ...) draws from its own stream keyed
by a name plus optional integer qualifiers (round, client id). Streams
derived this way are statistically independent, so toggling one feature
never perturbs another feature's draws, and per-round streams make
interrupted runs resumable without saving generator state.
"""

import zlib

import numpy as np


def stream_key(name, *qualifiers):
    """Map a stream name + integer qualifiers to a stable entropy tuple."""
    parts = [zlib.crc32(name.encode("utf8"))]
    for q in qualifiers:
        parts.append(int(q) & 0xFFFFFFFF)
    return tuple(parts)


def named_rng(root_seed, name, *qualifiers):
    """Generator for the stream ``name`` under ``root_seed``.

    Same (root_seed, name, qualifiers) always yields an identical
    generator; distinct keys yield independent streams.
    """
    entropy = (int(root_seed),) + stream_key(name, *qualifiers)
    return np.random.default_rng(np.random.SeedSequence(entropy))
