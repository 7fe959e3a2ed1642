"""Counter-based random streams (Philox4x64-10).

Every random quantity in the package is a pure function of
``(master seed, stream id, counter words)``.  That is what makes walk
simulations reproducible independently of batching or thread count, and it
gives random *access*: the bits of one increment can be regenerated in
isolation (the window trackers in :mod:`lampwalks.diagnostics` rely on this).

The block function is the reference Philox4x64-10.  numpy's own
``np.random.Philox`` is the test oracle: our ``philox4x64(ctr, key)`` equals
numpy's first output block for ``counter = ctr - 1`` (numpy increments the
counter before producing a block).
"""

from __future__ import annotations

import numpy as np

__all__ = ["philox4x64", "uniform_from_bits", "derive_key", "splitmix64", "Stream"]

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# counter word 1 tags the purpose of a draw within one (stream, step)
TAG_INDEX = 0  # the heavy-tail index n of an increment
TAG_BITS_A = 1  # lamp bits, first coordinate
TAG_BITS_B = 2  # lamp bits, second coordinate / prescribed-image draw
TAG_EVENT = 3  # chunked exceedance-event sampling (tau fast path)
TAG_MISC = 4  # sequential Stream draws

_ERRSTATE = {"over": "ignore"}


def _mulhilo(a, b):
    """128-bit product of uint64 operands, as (high, low) words."""
    with np.errstate(**_ERRSTATE):
        lo = a * b
        a_lo = a & _MASK32
        a_hi = a >> _SHIFT32
        b_lo = b & _MASK32
        b_hi = b >> _SHIFT32
        mid1 = a_lo * b_hi
        mid2 = a_hi * b_lo
        t = ((a_lo * b_lo) >> _SHIFT32) + (mid1 & _MASK32) + (mid2 & _MASK32)
        hi = a_hi * b_hi + (mid1 >> _SHIFT32) + (mid2 >> _SHIFT32) + (t >> _SHIFT32)
    return hi, lo


def philox4x64(ctr, key):
    """Run the Philox4x64-10 block function.

    ``ctr`` is a sequence of four uint64 arrays (broadcastable), ``key`` a
    sequence of two.  Returns four uint64 arrays of the broadcast shape.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in ctr)
    k0 = np.asarray(key[0], dtype=np.uint64)
    k1 = np.asarray(key[1], dtype=np.uint64)
    x0, x1, x2, x3 = np.broadcast_arrays(c0, c1, c2, c3)
    x0 = x0.copy()
    x1 = x1.copy()
    x2 = x2.copy()
    x3 = x3.copy()
    with np.errstate(**_ERRSTATE):
        for _ in range(10):
            hi0, lo0 = _mulhilo(_M0, x0)
            hi1, lo1 = _mulhilo(_M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return x0, x1, x2, x3


def uniform_from_bits(word):
    """Map uint64 words to doubles in [0, 1) using the top 53 bits."""
    return (np.asarray(word, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def splitmix64(x: int) -> int:
    """One SplitMix64 step; used to decorrelate seed/salt pairs into keys."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_key(seed: int, salt: int = 0) -> int:
    """First key word for a stream family: mixes the master seed with a salt.

    The second key word is the stream (path) index, supplied by the caller,
    so path ``i`` always draws from the stream ``(derive_key(seed, salt), i)``.
    """
    return splitmix64(splitmix64(seed & 0xFFFFFFFFFFFFFFFF) ^ splitmix64(salt))


class Stream:
    """A sequential view of one counter-based stream.

    Draws consume counter positions ``0, 1, 2, ...`` under ``TAG_MISC``; the
    state is just that position, so instances are cheap and never shared.
    """

    def __init__(self, seed: int, stream_id: int = 0, salt: int = 0):
        self._k0 = derive_key(seed, salt)
        self._k1 = stream_id & 0xFFFFFFFFFFFFFFFF
        self._pos = 0

    def uniforms(self, count: int) -> np.ndarray:
        """Next ``count`` doubles in [0, 1)."""
        # four words per block; consume whole blocks to keep indexing simple
        blocks = -(-count // 4)
        c0 = np.arange(self._pos, self._pos + blocks, dtype=np.uint64)
        words = philox4x64((c0, np.uint64(TAG_MISC), np.uint64(0), np.uint64(0)), (self._k0, self._k1))
        self._pos += blocks
        flat = np.stack(words, axis=-1).reshape(-1)[:count]
        return uniform_from_bits(flat)

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])
