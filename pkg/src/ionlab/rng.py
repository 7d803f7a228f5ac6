"""Counter-based random streams.

Every random number used by the simulator is a pure function of
``(run_seed, shot_index, tag, slot)``.  The block function is Philox4x64-10,
evaluated on whole numpy arrays of shot indices at once, so a batch of shots
and the same shots run one at a time draw bit-identical numbers.

Counter layout (four 64-bit words): ``[slot, shot_index, tag, 0]``.
Key: ``[seed, STREAM_VERSION]``.  Each (tag, slot) yields four 64-bit lanes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

STREAM_ALGORITHM = "philox4x64-10"
STREAM_VERSION = 1

_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_MUL_A = np.uint64(0xD2E7470EE14C6C93)
_MUL_B = np.uint64(0xCA5A826395121157)
_WEYL_A = np.uint64(0x9E3779B97F4A7C15)
_WEYL_B = np.uint64(0xBB67AE8584CAA73B)
_TO_UNIT = 2.0**-53

# draw-site tags
TAG_PREP = 1
TAG_COOL = 2
TAG_PROJECT = 3
TAG_READOUT = 4
TAG_FIELD = 5
TAG_VOLTAGE = 6
TAG_SHUFFLE = 7
TAG_LEAK = 8
TAG_HEATING = 100  # + op index


def _mulhilo(a, b):
    a0 = a & _MASK32
    a1 = a >> _SHIFT32
    b0 = b & _MASK32
    b1 = b >> _SHIFT32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _SHIFT32) + (p01 & _MASK32) + (p10 & _MASK32)
    hi = p11 + (p01 >> _SHIFT32) + (p10 >> _SHIFT32) + (mid >> _SHIFT32)
    return hi, a * b


def philox4x64(counter, key):
    """Philox4x64-10 block function on broadcastable uint64 arrays.

    ``counter`` is a sequence of four arrays, ``key`` a sequence of two.
    Returns the four output words.
    """
    c0, c1, c2, c3 = (np.atleast_1d(np.asarray(c, dtype=np.uint64)) for c in counter)
    k0, k1 = (np.atleast_1d(np.asarray(k, dtype=np.uint64)) for k in key)
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = _mulhilo(_MUL_A, c0)
            hi1, lo1 = _mulhilo(_MUL_B, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _WEYL_A
            k1 = k1 + _WEYL_B
    return c0, c1, c2, c3


class CounterStream:
    """Random stream for one shot or an array of shots.

    Parameters
    ----------
    seed : int
        Run seed (64-bit).
    index : int or array of int
        Shot index (or indices).  Scalar index -> scalar draws.
    """

    def __init__(self, seed, index):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._scalar = np.ndim(index) == 0
        self.index = np.atleast_1d(np.asarray(index, dtype=np.uint64))

    def __len__(self):
        return self.index.size

    def subset(self, mask_or_idx):
        return CounterStream(self.seed, self.index[mask_or_idx])

    def raw(self, tag, slot=0):
        """Four uint64 lanes per shot, shape (4, n)."""
        n = self.index.size
        ctr = (np.full(n, slot, np.uint64), self.index,
               np.full(n, tag, np.uint64), np.zeros(n, np.uint64))
        return np.stack(philox4x64(ctr, (self.seed, STREAM_VERSION)))

    def _out(self, x):
        return x[0] if self._scalar else x

    def uniform(self, tag, slot=0, lane=0):
        """Uniform on [0, 1) with 53-bit resolution."""
        bits = self.raw(tag, slot)[lane] >> np.uint64(11)
        return self._out(bits.astype(np.float64) * _TO_UNIT)

    def uniform_open(self, tag, slot=0, lane=0):
        """Uniform on the open interval (0, 1)."""
        bits = self.raw(tag, slot)[lane] >> np.uint64(11)
        return self._out((bits.astype(np.float64) + 0.5) * _TO_UNIT)

    def normal(self, tag, slot=0, lane=0):
        """Standard normal by inverse CDF (one uniform per variate)."""
        return ndtri(self.uniform_open(tag, slot, lane))

    def exponential(self, tag, slot=0, lane=0):
        return -np.log(self.uniform_open(tag, slot, lane))


def shot_stream(seed, shot_index):
    return CounterStream(seed, shot_index)
