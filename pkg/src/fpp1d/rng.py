"""Counter-based random numbers for reproducible edge weights.

Every edge weight is a pure function of ``(seed, edge key, level, stream)``,
so weights can be regenerated for any finite window in any order, from any
process, without storing the field.  The generator is Philox4x64-10, the
same bijection that backs :class:`numpy.random.Philox`; this module only
evaluates it in a vectorised, stateless way.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "philox4x64",
    "counter_uniforms",
    "derive_seeds",
    "STREAM_WEIGHT",
    "STREAM_BRANCH",
    "STREAM_COUPLING",
    "STREAM_DELTA",
]

# stream identifiers keep auxiliary draws disjoint from the weights
STREAM_WEIGHT = 0
STREAM_BRANCH = 1
STREAM_COUPLING = 2
STREAM_DELTA = 3

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def _mulhilo(a: np.ndarray, b: np.uint64) -> tuple[np.ndarray, np.ndarray]:
    a0 = a & _LO
    a1 = a >> _S32
    b0 = b & _LO
    b1 = b >> _S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _S32) + (p01 & _LO) + (p10 & _LO)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(counter: np.ndarray, key: tuple[int, int], rounds: int = 10) -> np.ndarray:
    """Evaluate the Philox4x64 bijection.

    Parameters
    ----------
    counter : ndarray of uint64, shape (..., 4)
        Counter blocks.
    key : tuple of int
        Two 64-bit key words.
    rounds : int
        Number of rounds; 10 is the standard choice.

    Returns
    -------
    ndarray of uint64, shape (..., 4)
    """
    c = np.asarray(counter, dtype=np.uint64)
    c0, c1, c2, c3 = (c[..., i].copy() for i in range(4))
    k0 = np.uint64(key[0] & 0xFFFFFFFFFFFFFFFF)
    k1 = np.uint64(key[1] & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for r in range(rounds):
            hi0, lo0 = _mulhilo(c0, _M0)
            hi1, lo1 = _mulhilo(c2, _M1)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            if r < rounds - 1:
                k0 = k0 + _W0
                k1 = k1 + _W1
    return np.stack([c0, c1, c2, c3], axis=-1)


def counter_uniforms(seed: int, keys, levels, stream: int = STREAM_WEIGHT) -> np.ndarray:
    """Uniforms in the open interval (0, 1) indexed by ``(key, level)``.

    ``keys`` and ``levels`` are broadcast against each other.  The 53-bit
    mantissa is centred, ``(k + 1/2) 2^-53``, so neither 0 nor 1 occurs.
    """
    keys, levels = np.broadcast_arrays(np.asarray(keys, dtype=np.int64), np.asarray(levels, dtype=np.int64))
    ctr = np.empty(keys.shape + (4,), dtype=np.uint64)
    ctr[..., 0] = keys.astype(np.uint64)
    ctr[..., 1] = levels.astype(np.uint64)  # two's complement for negative levels
    ctr[..., 2] = np.uint64(stream)
    ctr[..., 3] = 0
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    out = philox4x64(ctr, (seed, 0x5EED))[..., 0]
    return ((out >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def derive_seeds(seed: int, count: int) -> np.ndarray:
    """Independent 63-bit replica seeds spawned from a master seed."""
    ss = np.random.SeedSequence(int(seed))
    words = ss.generate_state(2 * count, dtype=np.uint32).astype(np.uint64)
    return ((words[0::2] << np.uint64(32)) | words[1::2]) >> np.uint64(1)
