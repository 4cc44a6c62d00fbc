"""A minimal vectorised query language: sample, observe, and nesting.

A query body is an ordinary Python function ``body(trace, *inputs)`` written
with numpy broadcasting.  The trace runs it for a whole batch of random
streams at once: every ``trace.sample`` returns an array shaped like the
batch, and ``trace.observe`` adds log densities to the batch log weight.

Proposals are always the prior, so a run's log weight is the sum of its
observe terms.

Nesting: ``trace.sample_nested(*args)`` draws from the inner query attached
to the running estimator, and ``trace.observe_nested(*args)`` factors the
weight by an inner partition estimate.  Under Rao-Blackwellised nested
inference the outer batch has shape ``(B, 1)`` and ``sample_nested`` returns
``(B, N1)``, so code after the call is evaluated for every inner sample by
broadcasting.
"""

from dataclasses import dataclass, field
import logging
import math
from typing import Any, Callable

import numpy as np
from scipy import special

from . import _philox
from .errors import DegenerateWeightsError, ParameterError
from .numerics import categorical_rows, check_logweights, log_mean_exp, log_sum_exp

log = logging.getLogger(__name__)

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Substream indices reserved for nested calls and selection draws.  Outer
# and inner sample indices are small, so these never collide in practice.
NEST_TAG = 1 << 62
SELECT_TAG = (1 << 62) + (1 << 40)


def _arr(x):
    return np.asarray(x, dtype=float)


def _require(cond, msg):
    if not np.all(cond):
        raise ParameterError(msg)


class Distribution:
    """Base class for primitives; parameters may be arrays."""

    def logpdf(self, x):
        raise NotImplementedError

    def sample(self, rng, site=0):
        """Draw one value per stream of ``rng`` at draw site ``site``."""
        raise NotImplementedError

    def _batch(self, rng, *params):
        shape = np.broadcast_shapes(rng.shape, *(np.shape(p) for p in params))
        flat = [np.ascontiguousarray(np.broadcast_to(_arr(p), shape).reshape(-1)) for p in params]
        return shape, rng.flat_words(shape), flat


@dataclass(frozen=True)
class Normal(Distribution):
    """Normal with mean and standard deviation."""

    mean: Any
    std: Any

    def __post_init__(self):
        _require(_arr(self.std) > 0, "normal stddev must be > 0")

    def logpdf(self, x):
        z = (_arr(x) - self.mean) / self.std
        return -0.5 * z * z - np.log(self.std) - _HALF_LOG_2PI

    def sample(self, rng, site=0):
        shape, words, _ = self._batch(rng, self.mean, self.std)
        u = _philox.uniform53(words, site, 0).reshape(shape)
        return self.mean + self.std * special.ndtri(u)


@dataclass(frozen=True)
class Gamma(Distribution):
    """Gamma with shape and rate."""

    shape: Any
    rate: Any = 1.0

    def __post_init__(self):
        _require(_arr(self.shape) > 0, "gamma shape must be > 0")
        _require(_arr(self.rate) > 0, "gamma rate must be > 0")

    def logpdf(self, x):
        x = _arr(x)
        a, b = _arr(self.shape), _arr(self.rate)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (a - 1.0) * np.log(x) - b * x + a * np.log(b) - special.gammaln(a)
        return np.where(x > 0, out, -np.inf)

    def sample(self, rng, site=0):
        shape, words, (a, b) = self._batch(rng, self.shape, self.rate)
        return (_philox.gamma(words, site, a) / b).reshape(shape)


@dataclass(frozen=True)
class Beta(Distribution):
    a: Any
    b: Any

    def __post_init__(self):
        _require(_arr(self.a) > 0, "beta a must be > 0")
        _require(_arr(self.b) > 0, "beta b must be > 0")

    def logpdf(self, x):
        x = _arr(x)
        a, b = _arr(self.a), _arr(self.b)
        inside = (x > 0) & (x < 1)
        xs = np.where(inside, x, 0.5)
        out = (a - 1.0) * np.log(xs) + (b - 1.0) * np.log1p(-xs) - special.betaln(a, b)
        return np.where(inside, out, -np.inf)

    def sample(self, rng, site=0):
        shape, words, (a, b) = self._batch(rng, self.a, self.b)
        return _philox.beta(words, site, a, b).reshape(shape)


@dataclass(frozen=True)
class Uniform(Distribution):
    """Continuous uniform on ``[lo, hi]``."""

    lo: Any
    hi: Any

    def __post_init__(self):
        _require(_arr(self.lo) < _arr(self.hi), "uniform needs lo < hi")

    def logpdf(self, x):
        x = _arr(x)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, -np.log(_arr(self.hi) - self.lo), -np.inf)

    def sample(self, rng, site=0):
        shape, words, _ = self._batch(rng, self.lo, self.hi)
        u = _philox.uniform53(words, site, 0).reshape(shape)
        return self.lo + (self.hi - self.lo) * u


@dataclass(frozen=True)
class Categorical(Distribution):
    """Distribution over ``0..K-1`` given (unnormalised) log weights.

    ``logweights`` has shape ``(..., K)``; leading axes broadcast against the
    batch.  Samples are returned as float indices.
    """

    logweights: Any

    def __post_init__(self):
        lw = check_logweights(self.logweights)
        if lw.ndim == 0 or lw.shape[-1] == 0:
            raise ParameterError("categorical needs at least one outcome")
        if np.isneginf(log_sum_exp(lw, axis=-1)).any():
            raise ParameterError("categorical needs a positive weight")

    def logpdf(self, x):
        lw = _arr(self.logweights)
        lw = lw - np.expand_dims(log_sum_exp(lw, axis=-1), -1)
        x = _arr(x)
        k = lw.shape[-1]
        valid = (x == np.round(x)) & (x >= 0) & (x < k)
        idx = np.where(valid, x, 0).astype(np.int64)
        shape = np.broadcast_shapes(x.shape, lw.shape[:-1])
        lw = np.broadcast_to(lw, shape + (k,))
        idx = np.broadcast_to(idx, shape)
        out = np.take_along_axis(lw, idx[..., None], axis=-1)[..., 0]
        return np.where(np.broadcast_to(valid, shape), out, -np.inf)

    def sample(self, rng, site=0):
        lw = _arr(self.logweights)
        shape = np.broadcast_shapes(rng.shape, lw.shape[:-1])
        u = _philox.uniform53(rng.flat_words(shape), site, 0).reshape(shape)
        lw = np.broadcast_to(lw, shape + lw.shape[-1:])
        return categorical_rows(lw, u).astype(float)


def logpdf(dist, x):
    return dist.logpdf(x)


def sample(dist, rng):
    return dist.sample(rng, rng.counter)


class Trace:
    """Execution context for one batch of query runs.

    Parameters
    ----------
    rng : RngStream
        One stream per batch element.  Draw site ``i`` of the body is read
        from counter ``rng.counter + i`` of each element's stream.
    inner : Query, optional
        Target of ``sample_nested`` / ``observe_nested``.
    inner_budget : int, optional
        Inner samples per ``sample_nested`` call (Rao-Blackwellised layout).
    marginal_budget : int, optional
        Inner samples per ``observe_nested`` partition estimate.
    """

    def __init__(self, rng, inner=None, inner_budget=None, marginal_budget=None):
        self.rng = rng
        self.shape = rng.shape
        self.logw = np.zeros(self.shape)
        self.inner = inner
        self.inner_budget = inner_budget
        self.marginal_budget = marginal_budget
        self.inner_logw = None
        self._site = rng.counter
        self._calls = 0

    def sample(self, dist):
        value = dist.sample(self.rng, self._site)
        self._site += 1
        return value

    def observe(self, dist, value):
        self.logw = self.logw + dist.logpdf(value)

    def factor(self, logw):
        self.logw = self.logw + _arr(logw)

    def condition(self, predicate):
        """Hard constraint: zero weight wherever ``predicate`` is false."""
        self.logw = self.logw + np.where(predicate, 0.0, -np.inf)

    def _nest_parent(self):
        parent = self.rng.substream(NEST_TAG + self._calls)
        self._calls += 1
        return parent

    def sample_nested(self, *args):
        """Draw from the inner query's conditional distribution given ``args``."""
        if self.inner is None or self.inner_budget is None:
            raise RuntimeError("sample_nested needs an estimator that supplies an inner query and budget")
        if self.inner_logw is not None:
            raise RuntimeError("only one sample_nested call per query run is supported")
        if self.shape[-1:] != (1,):
            raise RuntimeError("sample_nested expects a trailing singleton batch axis")
        streams = self._nest_parent().substream(np.arange(self.inner_budget))
        inner = Trace(streams)
        value = self.inner.body(inner, *args)
        self.inner_logw = np.broadcast_to(inner.logw, streams.shape)
        return np.broadcast_to(value, streams.shape)

    def observe_nested(self, *args):
        """Factor the weight by an unbiased inner partition estimate."""
        if self.inner is None or self.marginal_budget is None:
            raise RuntimeError("observe_nested needs an estimator that supplies an inner query and budget")
        streams = self._nest_parent()[..., None].substream(np.arange(self.marginal_budget))
        inner = Trace(streams)
        self.inner.body(inner, *(np.expand_dims(_arr(a), -1) for a in args))
        lw = np.broadcast_to(inner.logw, streams.shape)
        self.logw = self.logw + log_mean_exp(lw, axis=-1)


@dataclass(frozen=True)
class Query:
    """A nestable model: ``body(trace, *inputs)`` returns the query value.

    ``inner`` names the query that ``sample_nested`` / ``observe_nested``
    refer to, when the body uses them; ``budget`` is an optional default
    inner budget (int, Schedule or BudgetPolicy) for nested estimators.
    """

    body: Callable
    inputs: tuple = ()
    inner: "Query | None" = None
    name: str = ""
    budget: Any = None

    def bind(self, *inputs):
        return Query(self.body, tuple(inputs), self.inner, self.name, self.budget)


@dataclass(frozen=True)
class WeightedSample:
    """Query values with log weights; both have the batch shape of the run."""

    value: Any
    logw: Any

    def __post_init__(self):
        check_logweights(self.logw)


def run_weighted(query, rng, **trace_kwargs):
    """Run ``query`` once per stream of ``rng`` with the prior as proposal."""
    trace = Trace(rng, inner=query.inner, **trace_kwargs)
    value = query.body(trace, *query.inputs)
    return WeightedSample(np.broadcast_to(value, trace.shape), np.broadcast_to(trace.logw, trace.shape))


def log_marginal(samples, axis=-1):
    """``log(mean(exp(logw)))`` over ``axis``: the log of an unbiased partition estimate.

    Accepts a WeightedSample, an array of log weights, or a list of
    WeightedSamples.
    """
    if isinstance(samples, WeightedSample):
        lw = _arr(samples.logw)
    elif isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], WeightedSample):
        lw = np.concatenate([np.ravel(s.logw) for s in samples])
        axis = -1
    else:
        lw = _arr(samples)
    if lw.size == 0:
        raise ValueError("empty weight set")
    if lw.ndim == 0:
        return float(lw)
    out = log_mean_exp(lw, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class EmpiricalMeasure:
    """Scalar atoms with normalised weights.

    ``group_sizes``, when given, says that consecutive runs of atoms come
    from the same outer sample (the Rao-Blackwellised layout); standard
    errors and the effective sample size are then computed per group.
    """

    values: np.ndarray
    weights: np.ndarray
    group_sizes: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.values.size == 0:
            raise ValueError("empirical measure needs at least one atom")
        if self.values.shape != self.weights.shape:
            raise ValueError("values and weights differ in length")
        if self.group_sizes is not None:
            self.group_sizes = np.asarray(self.group_sizes, dtype=np.int64)
            if self.group_sizes.sum() != self.values.size:
                raise ValueError("group sizes do not cover the atoms")

    @classmethod
    def from_logweights(cls, values, logw, group_sizes=None):
        """Normalise log weights; raises DegenerateWeightsError if all are zero."""
        logw = check_logweights(logw).reshape(-1)
        lse = log_sum_exp(logw)
        if lse == -np.inf:
            raise DegenerateWeightsError("degenerate measure")
        return cls(values, np.exp(logw - lse), group_sizes)

    def __len__(self):
        return self.values.size

    def _group_sums(self, x):
        if self.group_sizes is None:
            return x
        starts = np.concatenate(([0], np.cumsum(self.group_sizes)[:-1]))
        return np.add.reduceat(x, starts)

    @property
    def n_eff(self):
        """Kish effective sample size (per outer group when grouped)."""
        w = self._group_sums(self.weights)
        return float(w.sum() ** 2 / np.sum(w * w))

    def mean(self, fn=None):
        v = self.values if fn is None else fn(self.values)
        return float(np.dot(self.weights, v))

    def stderr(self, fn=None):
        """Delta-method standard error of the self-normalised mean."""
        v = self.values if fn is None else fn(self.values)
        mu = float(np.dot(self.weights, v))
        r = self._group_sums(self.weights * (v - mu))
        return float(np.sqrt(np.sum(r * r)))

    def cdf(self, x):
        order = np.argsort(self.values, kind="stable")
        cum = np.cumsum(self.weights[order])
        k = np.searchsorted(self.values[order], x, side="right")
        return np.where(k > 0, cum[np.maximum(k - 1, 0)], 0.0)
