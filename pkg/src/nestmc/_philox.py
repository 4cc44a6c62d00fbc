"""Philox-4x32-10 kernels (Salmon et al., Random123) compiled with numba.

Every kernel works on flat arrays of stream words with shape ``(n, 4)``:
words 0-1 are the Philox key, words 2-3 fill the upper half of the counter
block.  The lower half of the counter block is ``(site, round)``.
"""

import numpy as np
from numba import njit

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# XOR-ed into the upper counter words when deriving child keys, so that
# derivation blocks never coincide with draw blocks of the same stream.
_TAG0 = np.uint64(0x5CA1AB1E)
_TAG1 = np.uint64(0xD15EA5E5)

_INV32 = 1.0 / 4294967296.0
_INV53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * np.pi


@njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _LO
            k1 = (k1 + _W1) & _LO
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _S32) ^ c1 ^ k0,
            p1 & _LO,
            (p0 >> _S32) ^ c3 ^ k1,
            p0 & _LO,
        )
    return c0, c1, c2, c3


@njit(cache=True)
def block(words, site, rnd):
    """Raw 4x32-bit output for every stream at counter ``(site, rnd)``."""
    n = words.shape[0]
    out = np.empty((n, 4), dtype=np.uint32)
    s = np.uint64(site)
    r = np.uint64(rnd)
    for i in range(n):
        a, b, c, d = philox4x32(
            s, r, np.uint64(words[i, 2]), np.uint64(words[i, 3]),
            np.uint64(words[i, 0]), np.uint64(words[i, 1]),
        )
        out[i, 0] = a
        out[i, 1] = b
        out[i, 2] = c
        out[i, 3] = d
    return out


@njit(cache=True)
def derive(words, index):
    """Child stream words for ``(words[i], index[i])``."""
    n = words.shape[0]
    out = np.empty((n, 4), dtype=np.uint32)
    for i in range(n):
        idx = np.uint64(index[i])
        a, b, c, d = philox4x32(
            idx & _LO, idx >> _S32,
            np.uint64(words[i, 2]) ^ _TAG0, np.uint64(words[i, 3]) ^ _TAG1,
            np.uint64(words[i, 0]), np.uint64(words[i, 1]),
        )
        out[i, 0] = a
        out[i, 1] = b
        out[i, 2] = c
        out[i, 3] = d
    return out


@njit(cache=True, inline="always")
def _u53(a, b):
    return ((a >> np.uint64(5)) * np.uint64(67108864) + (b >> np.uint64(6)) + 0.5) * _INV53


@njit(cache=True)
def uniform53(words, site, rnd):
    """One double in (0, 1) per stream; 53 bits from the first two words."""
    n = words.shape[0]
    out = np.empty(n)
    s = np.uint64(site)
    r = np.uint64(rnd)
    for i in range(n):
        a, b, _, _ = philox4x32(
            s, r, np.uint64(words[i, 2]), np.uint64(words[i, 3]),
            np.uint64(words[i, 0]), np.uint64(words[i, 1]),
        )
        out[i] = _u53(a, b)
    return out


@njit(cache=True)
def uniform53_sites(words, site0, count):
    """``count`` consecutive sites per stream, returned as ``(n, count)``."""
    n = words.shape[0]
    out = np.empty((n, count))
    for i in range(n):
        for j in range(count):
            a, b, _, _ = philox4x32(
                np.uint64(site0 + j), np.uint64(0),
                np.uint64(words[i, 2]), np.uint64(words[i, 3]),
                np.uint64(words[i, 0]), np.uint64(words[i, 1]),
            )
            out[i, j] = _u53(a, b)
    return out


@njit(cache=True, inline="always")
def _gamma_one(w0, w1, w2, w3, s, round0, a):
    # Marsaglia & Tsang (2000); shapes below one are boosted by U**(1/a).
    boost = a < 1.0
    a1 = a + 1.0 if boost else a
    d = a1 - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    r = round0 + np.uint64(1)
    while True:
        x0, x1, x2, _ = philox4x32(s, r, w2, w3, w0, w1)
        u1 = (np.float64(x0) + 0.5) * _INV32
        u2 = (np.float64(x1) + 0.5) * _INV32
        u3 = (np.float64(x2) + 0.5) * _INV32
        x = np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
        v = 1.0 + c * x
        r += np.uint64(1)
        if v <= 0.0:
            continue
        v = v * v * v
        if np.log(u3) < 0.5 * x * x + d - d * v + d * np.log(v):
            break
    g = d * v
    if boost:
        y0, y1, _, _ = philox4x32(s, round0, w2, w3, w0, w1)
        g = np.exp(np.log(g) + np.log(_u53(y0, y1)) / a)
    return g


@njit(cache=True)
def gamma(words, site, shape):
    """Unit-rate gamma variates; ``shape`` is per stream."""
    n = words.shape[0]
    out = np.empty(n)
    s = np.uint64(site)
    for i in range(n):
        out[i] = _gamma_one(
            np.uint64(words[i, 0]), np.uint64(words[i, 1]),
            np.uint64(words[i, 2]), np.uint64(words[i, 3]),
            s, np.uint64(0), shape[i],
        )
    return out


@njit(cache=True)
def beta(words, site, a, b):
    """Beta variates as ``Ga / (Ga + Gb)``; the two gammas use disjoint rounds."""
    n = words.shape[0]
    out = np.empty(n)
    s = np.uint64(site)
    half = np.uint64(1) << np.uint64(31)
    for i in range(n):
        w0 = np.uint64(words[i, 0])
        w1 = np.uint64(words[i, 1])
        w2 = np.uint64(words[i, 2])
        w3 = np.uint64(words[i, 3])
        ga = _gamma_one(w0, w1, w2, w3, s, np.uint64(0), a[i])
        gb = _gamma_one(w0, w1, w2, w3, s, half, b[i])
        out[i] = ga / (ga + gb)
    return out
