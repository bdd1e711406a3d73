"""Seeded, stream-named randomness.

Every stochastic choice in the stack (weight init, dropout masks, data
augmentation, dataset splits, phantom synthesis) draws from a named stream
derived from one 64-bit master seed.  Streams are keyed by a stable hash of
``(seed, stream_name, *subkeys)`` into a Philox counter-based generator, so a
given draw depends only on its key and draw index -- never on how many other
streams were consumed first, or in what order.
"""

import hashlib
import struct

import numpy as np

# Canonical stream names used by the training stack.  Arbitrary names are
# accepted; these are the ones wired into the pipeline.
STREAMS = ("init", "dropout", "augment", "split", "phantom")

_MASK64 = (1 << 64) - 1


def _derive_key(seed: int, stream: str, subkeys: tuple) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack("<Q", seed & _MASK64))
    h.update(stream.encode("utf-8"))
    for k in subkeys:
        if isinstance(k, str):
            raw = k.encode("utf-8")
            h.update(struct.pack("<cI", b"s", len(raw)))
            h.update(raw)
        else:
            h.update(struct.pack("<cq", b"i", int(k)))
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Master seed plus derived per-stream generators."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def generator(self, stream: str, *subkeys) -> np.random.Generator:
        """Fresh generator for ``(seed, stream, subkeys)``.

        Subkeys may be ints or strings (e.g. a parameter name).  Calling this
        twice with identical arguments yields generators that produce
        identical draw sequences.
        """
        key = _derive_key(self.seed, stream, subkeys)
        return np.random.Generator(np.random.Philox(key=key))

    def normal(self, shape, mean: float = 0.0, std: float = 1.0,
               stream: str = "init", *subkeys,
               dtype=np.float32) -> np.ndarray:
        g = self.generator(stream, *subkeys)
        return g.normal(mean, std, size=shape).astype(dtype)
