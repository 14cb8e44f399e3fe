"""Counter-based, splittable random streams.

A :class:`Stream` is nothing more than a 64-bit key. Children are derived by
hashing ``(key, tag)``, so the stream for ``(seed, pass, layer, head, row)``
is the same no matter in which order, or on which thread, it is requested.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import MASK64, derive_key

_ROOT = 0x5EED_0F_A77E_4710


@dataclass(frozen=True)
class Stream:
    key: int

    @classmethod
    def from_seed(cls, seed, *path):
        return cls(derive_key(_ROOT, int(seed))).child(*path)

    def child(self, *tags):
        key = self.key
        for tag in tags:
            key = derive_key(key, int(tag))
        return Stream(key)

    def numpy(self):
        """A numpy Generator seeded from this stream's key."""
        return np.random.default_rng(self.key & MASK64)


def derive_seed(seed, *tags):
    """Integer seed for a derived stream; usable wherever a seed is expected."""
    return Stream.from_seed(seed, *tags).key
