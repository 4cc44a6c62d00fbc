"""Log-space weight arithmetic and splittable counter-based randomness.

Weights are plain float64 values (or arrays) holding log weights; ``-inf``
is a legal zero weight, NaN and ``+inf`` are not.
"""

import numpy as np

from . import _philox
from .errors import DegenerateWeightsError

_SEED_KEY = (0x243F6A88, 0x85A308D3)
_WORD = (1 << 32) - 1


def check_logweights(logw):
    """Raise ``ValueError`` if any log weight is NaN or ``+inf``; return the array."""
    logw = np.asarray(logw, dtype=float)
    if np.isnan(logw).any():
        raise ValueError("log weight is NaN")
    if np.isposinf(logw).any():
        raise ValueError("log weight is +inf")
    return logw


def log_sum_exp(ws, axis=None):
    """Stable ``log(sum(exp(ws)))`` with a max shift.

    Returns ``-inf`` exactly when every input is ``-inf``.  Raises
    ``ValueError("empty weight set")`` for an empty input.
    """
    ws = np.asarray(ws, dtype=float)
    if ws.size == 0 or (axis is not None and ws.shape[axis] == 0):
        raise ValueError("empty weight set")
    m = np.max(ws, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(ws - safe), axis=axis, keepdims=True)) + safe
    out = np.where(np.isneginf(m), -np.inf, out)
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_mean_exp(ws, axis=None):
    """``log(mean(exp(ws)))``; the log of an unbiased partition estimate."""
    ws = np.asarray(ws, dtype=float)
    n = ws.size if axis is None else ws.shape[axis]
    return log_sum_exp(ws, axis=axis) - np.log(n) if n else log_sum_exp(ws, axis=axis)


def normalize_logweights(ws, axis=None):
    """Linear-space weights summing to one along ``axis``."""
    ws = np.asarray(ws, dtype=float)
    lse = log_sum_exp(ws, axis=axis)
    if np.isneginf(lse).any():
        raise DegenerateWeightsError("degenerate categorical")
    lse = lse if axis is None else np.expand_dims(lse, axis)
    return np.exp(ws - lse)


def categorical_rows(logw, u):
    """Inverse-CDF categorical draw along the last axis of ``logw``.

    ``u`` holds one uniform per row.  Rows whose weights are all zero raise
    ``DegenerateWeightsError``.
    """
    logw = np.asarray(logw, dtype=float)
    p = normalize_logweights(logw, axis=-1)
    cdf = np.cumsum(p, axis=-1)
    u = np.asarray(u, dtype=float)[..., None] * cdf[..., -1:]
    idx = np.sum(cdf <= u, axis=-1)
    # Never land on a trailing zero-weight atom through round-off.
    last = logw.shape[-1] - 1 - np.argmax(np.isfinite(logw)[..., ::-1], axis=-1)
    return np.minimum(idx, last)


def categorical_from_logweights(ws, rng):
    """Index ``m`` drawn with probability ``exp(ws[m]) / sum(exp(ws))``.

    ``rng`` is a scalar :class:`RngStream`; its first uniform is consumed.
    """
    ws = np.asarray(ws, dtype=float)
    if ws.ndim != 1 or ws.size == 0:
        raise ValueError("empty weight set")
    return int(categorical_rows(ws, rng.uniform()))


class RngStream:
    """A batch of Philox-4x32 streams.

    ``words`` has shape ``batch_shape + (4,)``: 128 bits of key material per
    stream.  ``counter`` is the first draw site used by :meth:`uniform`.
    Child streams come from :meth:`substream`, which hashes the parent key
    with the child index, so children are independent of call order.
    """

    __slots__ = ("words", "counter")

    def __init__(self, words, counter=0):
        words = np.array(words, dtype=np.uint32)
        if words.ndim < 1 or words.shape[-1] != 4:
            raise ValueError("stream words must have trailing dimension 4")
        words.setflags(write=False)
        if counter < 0 or counter >= 1 << 32:
            raise ValueError("counter out of range")
        self.words = words
        self.counter = int(counter)

    @classmethod
    def from_seed(cls, seed):
        """Root stream for an integer seed in ``[0, 2**128)``."""
        seed = int(seed)
        if seed < 0 or seed >= 1 << 128:
            raise ValueError("seed must lie in [0, 2**128)")
        ctr = np.array([[(seed >> (32 * i)) & _WORD for i in range(4)]], dtype=np.uint32)
        # One Philox block with a fixed key whitens small seeds.
        words = np.empty_like(ctr)
        k = np.array([[_SEED_KEY[0], _SEED_KEY[1], ctr[0, 2], ctr[0, 3]]], dtype=np.uint32)
        out = _philox.block(k, int(ctr[0, 0]), int(ctr[0, 1]))
        words[:] = out
        return cls(words[0])

    @property
    def shape(self):
        return self.words.shape[:-1]

    @property
    def key(self):
        """The 128-bit key material of a scalar stream as an int."""
        if self.shape != ():
            raise ValueError("key is only defined for a scalar stream")
        return sum(int(w) << (32 * i) for i, w in enumerate(self.words))

    def __getitem__(self, item):
        if not isinstance(item, tuple):
            item = (item,)
        return RngStream(self.words[item + (slice(None),)], self.counter)

    def __len__(self):
        return self.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, RngStream)
            and self.counter == other.counter
            and self.words.shape == other.words.shape
            and bool(np.all(self.words == other.words))
        )

    def __hash__(self):
        return hash((self.words.tobytes(), self.words.shape, self.counter))

    def __repr__(self):
        if self.shape == ():
            return f"RngStream(key={self.key:#034x}, counter={self.counter})"
        return f"RngStream(shape={self.shape}, counter={self.counter})"

    def advance(self, n):
        return RngStream(self.words, self.counter + n)

    def substream(self, index):
        """Child streams; broadcasts ``index`` against the batch shape."""
        index = np.asarray(index)
        if index.dtype.kind not in "iu":
            raise TypeError("substream index must be integer")
        if (index < 0).any():
            raise ValueError("substream index must be non-negative")
        shape = np.broadcast_shapes(self.shape, index.shape)
        words = np.broadcast_to(self.words, shape + (4,)).reshape(-1, 4)
        idx = np.broadcast_to(index.astype(np.uint64), shape).reshape(-1)
        out = _philox.derive(np.ascontiguousarray(words), np.ascontiguousarray(idx))
        return RngStream(out.reshape(shape + (4,)))

    def flat_words(self, shape=None):
        """Contiguous ``(n, 4)`` words, optionally broadcast to ``shape`` first."""
        shape = self.shape if shape is None else tuple(shape)
        w = np.broadcast_to(self.words, shape + (4,)).reshape(-1, 4)
        return np.ascontiguousarray(w)

    def uniform(self, n=None, site=None):
        """Uniforms in (0, 1) from consecutive draw sites.

        With ``n=None`` one value per stream (shape ``batch_shape``),
        otherwise shape ``batch_shape + (n,)``.
        """
        site = self.counter if site is None else site
        words = self.flat_words()
        if n is None:
            return _philox.uniform53(words, site, 0).reshape(self.shape)
        return _philox.uniform53_sites(words, site, int(n)).reshape(self.shape + (int(n),))
