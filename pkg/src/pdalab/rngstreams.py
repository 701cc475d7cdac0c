"""Named, independent random substreams derived from one experiment seed.

Each consumer of randomness (data shuffling, weight initialization,
divergence-proxy training, synthetic generation) pulls its own stream,
so toggling one feature never perturbs another's draws.  Streams are
built from ``numpy.random.SeedSequence`` keyed by the experiment seed
plus a stable hash of the stream name.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of ``seed``; stable across runs."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed),
                                                        spawn_key=(_name_key(name),)))


def substream_seed(seed: int, name: str) -> int:
    """A derived integer seed for components that take a plain seed."""
    return int(substream(seed, name).integers(0, 2**63 - 1))
