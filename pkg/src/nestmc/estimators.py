"""Monte Carlo, nested Monte Carlo and online nested Monte Carlo estimators.

Randomness layout (shared by every estimator): outer sample ``n`` (0-based)
uses ``rng.substream(n)``; its ``m``-th inner sample uses
``rng.substream(n).substream(m)``, and so on down the levels.  Estimates
therefore do not depend on chunking, and ONMC with a constant schedule is
bit-identical to NMC with the same fixed budgets.
"""

from dataclasses import dataclass
import enum
import logging

import numpy as np

from .errors import ConfigError, DegenerateWeightsError
from .numerics import RngStream, categorical_rows, check_logweights, log_sum_exp, normalize_logweights
from .ppl import SELECT_TAG, EmpiricalMeasure, Query, Trace, run_weighted
from .schedules import BudgetPolicy, Schedule

log = logging.getLogger(__name__)

# Upper bound on leaf evaluations held in memory at once.
CHUNK = 1 << 18


@dataclass(frozen=True)
class NestedProblem:
    """A depth-``D`` nested expectation.

    ``samplers[k](trace, *prefix)`` draws ``y_k`` given ``y_0 .. y_{k-1}``.
    ``functions[k](*prefix, inner)`` is ``f_k`` for ``k < D`` and
    ``functions[D](*prefix)`` is ``f_D``.  All are vectorised: prefix arrays
    carry a trailing axis per level, so plain broadcasting applies.
    """

    samplers: tuple
    functions: tuple
    name: str = ""

    def __post_init__(self):
        if len(self.samplers) == 0 or len(self.samplers) != len(self.functions):
            raise ConfigError("need one sampler and one function per level")

    @property
    def depth(self):
        return len(self.samplers) - 1


class EstimatorVariant(enum.Enum):
    RB = "rb"
    SINGLE_SAMPLE = "single_sample"
    NAIVE = "naive_n1_equals_1"
    BROKEN = "broken_conditional_n1_equals_2"


def _level_values(problem, k, prefix, rng, budgets):
    y = problem.samplers[k](Trace(rng), *prefix)
    full = prefix + (np.broadcast_to(y, rng.shape),)
    if k == problem.depth:
        return np.broadcast_to(problem.functions[k](*full), rng.shape)
    child = rng[..., None].substream(np.arange(budgets[k]))
    vals = _level_values(problem, k + 1, tuple(a[..., None] for a in full), child, budgets)
    inner = np.mean(vals, axis=-1)
    return np.broadcast_to(problem.functions[k](*full, inner), rng.shape)


def budget_runs(policy, n0):
    """Yield ``(start, stop, budgets)`` over maximal runs of equal inner budgets."""
    b = policy.budgets(np.arange(1, n0 + 1))
    if b.shape[1] == 0:
        yield 0, n0, ()
        return
    cuts = np.flatnonzero(np.any(np.diff(b, axis=0) != 0, axis=1)) + 1
    edges = np.concatenate(([0], cuts, [n0]))
    for s, e in zip(edges[:-1], edges[1:]):
        yield int(s), int(e), tuple(int(x) for x in b[s])


def chunk_ranges(start, stop, per_item):
    step = max(1, CHUNK // max(1, per_item))
    for s in range(start, stop, step):
        yield s, min(stop, s + step)


def outer_values(problem, n0, budget, rng):
    """Per-outer-sample values ``f_0(y_0, I_1(...))`` under a budget policy."""
    if n0 < 1:
        raise ConfigError("N0 must be >= 1")
    policy = BudgetPolicy.coerce(budget, problem.depth)
    out = np.empty(n0)
    for s, e, b in budget_runs(policy, n0):
        for cs, ce in chunk_ranges(s, e, int(np.prod(b))):
            out[cs:ce] = _level_values(problem, 0, (), rng.substream(np.arange(cs, ce)), b)
    return out


def _running_mean(values):
    return np.cumsum(values) / np.arange(1, values.size + 1)


def mc_estimate(problem, n0, rng):
    """Plain Monte Carlo mean of ``f_0(y_0)`` for a depth-0 problem."""
    if problem.depth != 0:
        raise ConfigError("mc_estimate needs a depth-0 problem")
    return float(_running_mean(outer_values(problem, n0, (), rng))[-1])


def nmc_estimate(problem, n0, budgets, rng):
    """Nested Monte Carlo with fixed inner budgets ``(N1, ..., ND)``."""
    policy = BudgetPolicy.coerce(budgets, problem.depth)
    if not policy.is_fixed:
        raise ConfigError("nmc_estimate needs fixed budgets; use onmc_estimate for schedules")
    return float(_running_mean(outer_values(problem, n0, policy, rng))[-1])


def onmc_running(problem, n0, schedule, rng):
    """Running ONMC estimate after each outer sample ``1..N0``."""
    return _running_mean(outer_values(problem, n0, schedule, rng))


def onmc_estimate(problem, n0, schedule, rng):
    """Online NMC: outer sample ``n0`` uses inner budgets ``tau_k(n0)``."""
    return float(onmc_running(problem, n0, schedule, rng)[-1])


class OnlineNMC:
    """Incrementally refined ONMC estimate; earlier samples are never revisited.

    >>> online = OnlineNMC(problem, Schedule.sqrt_floor(25), rng)  # doctest: +SKIP
    >>> online.extend(1000); online.estimate                       # doctest: +SKIP
    """

    def __init__(self, problem, schedule, rng):
        self.problem = problem
        self.policy = BudgetPolicy.coerce(schedule, problem.depth)
        self.rng = rng
        self.n0 = 0
        self.estimate = 0.0

    def extend(self, count):
        """Draw ``count`` more outer samples; return the running estimates."""
        start = self.n0
        vals = np.empty(count)
        b = self.policy.budgets(np.arange(start + 1, start + count + 1))
        for i in range(count):
            # Group consecutive equal budgets to keep the work vectorised.
            if i and np.array_equal(b[i], b[i - 1]):
                continue
            j = i + 1
            while j < count and np.array_equal(b[j], b[i]):
                j += 1
            for cs, ce in chunk_ranges(start + i, start + j, int(np.prod(b[i]))):
                idx = np.arange(cs, ce)
                vals[cs - start:ce - start] = _level_values(
                    self.problem, 0, (), self.rng.substream(idx), tuple(int(x) for x in b[i])
                )
        n = start + np.arange(1, count + 1)
        running = (start * self.estimate + np.cumsum(vals)) / n
        self.n0 += count
        self.estimate = float(running[-1])
        return running


# --- nested inference -------------------------------------------------------


@dataclass
class NestedBatch:
    """Raw draws for outer samples ``start .. start + B - 1``.

    Every array has shape ``(B, N1)``: query values, outer log weights
    (``psi / q``) and inner log weights (``pi_i / q``) for each inner sample.
    """

    start: int
    values: np.ndarray
    outer_logw: np.ndarray
    inner_logw: np.ndarray

    @property
    def size(self):
        return self.values.shape[0]


def _inner_of(outer, inner):
    inner = outer.inner if inner is None else inner
    if inner is None:
        raise ConfigError("no inner query given")
    return inner


def _budget_of(outer, budget):
    budget = outer.budget if budget is None else budget
    if budget is None:
        raise ConfigError("no inner budget given")
    return budget


def nested_batches(outer, n0, budget, rng, inner=None):
    """Run the outer query with every nested call expanded to its inner samples."""
    inner = _inner_of(outer, inner)
    if n0 < 1:
        raise ConfigError("N0 must be >= 1")
    policy = BudgetPolicy.coerce(_budget_of(outer, budget), 1)
    for s, e, (n1,) in budget_runs(policy, n0):
        for cs, ce in chunk_ranges(s, e, n1):
            streams = rng.substream(np.arange(cs, ce))[:, None]
            trace = Trace(streams, inner=inner, inner_budget=n1)
            value = outer.body(trace, *outer.inputs)
            shape = (ce - cs, n1)
            inner_logw = trace.inner_logw if trace.inner_logw is not None else np.zeros(shape)
            yield NestedBatch(
                cs,
                np.array(np.broadcast_to(value, shape), dtype=float),
                check_logweights(np.broadcast_to(trace.logw, shape)),
                check_logweights(inner_logw),
            )


def rao_blackwell_logweights(batch):
    """Atom log weights ``psi/q * (pi_i/q) / sum_l (pi_i/q)`` and a degenerate-row mask.

    This is the nested importance weight with its ``1/N1`` factor removed,
    so groups with different ``N1`` (ONMC schedules) mix correctly.
    """
    lse = log_sum_exp(batch.inner_logw, axis=-1)
    bad = np.isneginf(lse)
    with np.errstate(invalid="ignore"):
        lw = batch.outer_logw + batch.inner_logw - np.where(bad, 0.0, lse)[:, None]
    lw[bad] = -np.inf
    return lw, bad


def _normalize_inplace(logw):
    m = np.max(logw) if logw.size else -np.inf
    if m == -np.inf:
        raise DegenerateWeightsError("degenerate measure")
    np.subtract(logw, m, out=logw)
    np.exp(logw, out=logw)
    logw /= np.sum(logw)
    return logw


def nested_is_measure(outer, n0, n1, rng, inner=None):
    """Rao-Blackwellised nested importance sampling measure.

    ``n1`` is a fixed inner budget or a Schedule (ONMC flavour).  Returns
    ``sum_n N1(n)`` atoms grouped by outer sample; outer samples whose inner
    weights are all zero are dropped with a warning.
    """
    policy = BudgetPolicy.coerce(_budget_of(outer, n1), 1)
    sizes = policy.budgets(np.arange(1, n0 + 1))[:, 0]
    total = int(sizes.sum())
    values = np.empty(total)
    logw = np.empty(total)
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    dropped = []
    for batch in nested_batches(outer, n0, policy, rng, inner):
        lw, bad = rao_blackwell_logweights(batch)
        a, b = offsets[batch.start], offsets[batch.start + batch.size]
        values[a:b] = batch.values.reshape(-1)
        logw[a:b] = lw.reshape(-1)
        if bad.any():
            dropped.extend(batch.start + np.flatnonzero(bad))
    if dropped:
        log.warning("dropping %d outer samples whose inner weights are all zero", len(dropped))
        keep = np.ones(total, dtype=bool)
        for n in dropped:
            keep[offsets[n]:offsets[n + 1]] = False
        values, logw = values[keep], logw[keep]
        sizes = np.delete(sizes, dropped)
    weights = _normalize_inplace(logw)
    return EmpiricalMeasure(values, weights, sizes)


def _select_uniforms(rng, start, size):
    return rng.substream(np.arange(start, start + size)).substream(SELECT_TAG).uniform()


def nested_is_single(outer, n0, variant, rng, n1=None, inner=None):
    """Nested inference returning one inner sample per outer sample.

    ``single_sample`` draws the returned inner sample in proportion to the
    inner weights among ``n1`` candidates (``n1`` an int or Schedule).
    ``naive_n1_equals_1`` returns the first inner draw, ignoring its weight.
    ``broken_conditional_n1_equals_2`` is ``single_sample`` with ``n1`` fixed at 2.
    Outer samples whose inner weights are all zero are dropped with a warning.
    """
    variant = EstimatorVariant(variant)
    if variant is EstimatorVariant.RB:
        raise ConfigError("use nested_is_measure for the Rao-Blackwellised estimator")
    if variant is EstimatorVariant.NAIVE:
        n1 = 1
    elif variant is EstimatorVariant.BROKEN:
        n1 = 2
    else:
        n1 = _budget_of(outer, n1)
    values = np.empty(n0)
    logw = np.empty(n0)
    for batch in nested_batches(outer, n0, n1, rng, inner):
        rows = np.arange(batch.size)
        bad = np.isneginf(batch.inner_logw).all(axis=1)
        if variant is EstimatorVariant.NAIVE:
            pick = np.zeros(batch.size, dtype=np.int64)
        else:
            pick = np.zeros(batch.size, dtype=np.int64)
            if not bad.all():
                u = _select_uniforms(rng, batch.start, batch.size)
                pick[~bad] = categorical_rows(batch.inner_logw[~bad], u[~bad])
        sl = slice(batch.start, batch.start + batch.size)
        values[sl] = batch.values[rows, pick]
        logw[sl] = np.where(bad, -np.inf, batch.outer_logw[rows, pick])
    dropped = np.isneginf(logw)
    if dropped.any() and variant is not EstimatorVariant.NAIVE:
        log.warning("dropping %d outer samples whose inner weights are all zero", int(dropped.sum()))
        values, logw = values[~dropped], logw[~dropped]
    return EmpiricalMeasure(values, _normalize_inplace(logw))


def nested_conditioning_estimate(outer, n0, m, rng, inner=None):
    """Outer importance sampling with weights factored by inner partition estimates.

    ``m`` is the fixed number of inner samples per estimate; it is
    deliberately not allowed to grow with ``n0``.
    """
    if isinstance(m, (Schedule, BudgetPolicy)) or int(m) != m or m < 1:
        raise ConfigError("nested conditioning needs a fixed integer inner budget >= 1")
    m = int(m)
    inner = _inner_of(outer, inner)
    values = np.empty(n0)
    logw = np.empty(n0)
    for cs, ce in chunk_ranges(0, n0, m):
        trace = Trace(rng.substream(np.arange(cs, ce)), inner=inner, marginal_budget=m)
        values[cs:ce] = np.broadcast_to(outer.body(trace, *outer.inputs), trace.shape)
        logw[cs:ce] = check_logweights(np.broadcast_to(trace.logw, trace.shape))
    return EmpiricalMeasure(values, _normalize_inplace(logw))


# --- special cases ----------------------------------------------------------


def finite_support_estimate(atoms, probs, inner, total, rng, fn=None):
    """Nested inference when the inner query's input takes finitely many values.

    The ``C`` inner problems are estimated separately with ``total // C``
    self-normalised importance samples each and combined with the exact
    outer probabilities.  ``inner`` is called as ``body(trace, y, *inputs)``;
    ``fn(y, z)`` is the quantity whose expectation is wanted (default ``z``).
    Atom ``c`` uses ``rng.substream(c).substream(m)`` for its ``m``-th sample.
    """
    atoms = np.asarray(atoms, dtype=float).reshape(-1)
    probs = np.asarray(probs, dtype=float).reshape(-1)
    if atoms.size == 0:
        raise ConfigError("finite support needs at least one atom")
    if probs.shape != atoms.shape or (probs < 0).any() or not np.isclose(probs.sum(), 1.0):
        raise ConfigError("probabilities must be non-negative, sum to one, and match the atoms")
    per = int(total) // atoms.size
    if per < 1:
        raise ConfigError("total budget smaller than the number of atoms")
    fn = (lambda y, z: z) if fn is None else fn
    est = 0.0
    for c, y in enumerate(atoms):
        bound = Query(inner.body, (y, *inner.inputs), inner.inner, inner.name, inner.budget)
        ws = run_weighted(bound, rng.substream(c).substream(np.arange(per)))
        w = normalize_logweights(ws.logw)
        est += probs[c] * float(np.dot(w, fn(y, np.asarray(ws.value, dtype=float))))
    return est


def rejection_exact_sample(inner, rng, max_iter=10**6):
    """Exact conditional samples by guess-and-check, one per stream of ``rng``.

    ``inner`` must condition only through hard constraints, so every run has
    log weight 0 or ``-inf``.  Attempt ``a`` uses ``rng.substream(a)``.
    Query inputs may be arrays broadcastable to the batch shape.
    Raises ``RuntimeError("acceptance probability too small")`` after
    ``max_iter`` attempts.
    """
    shape = rng.shape
    flat = RngStream(rng.words.reshape(-1, 4), rng.counter)
    inputs = [np.broadcast_to(np.asarray(a), shape).reshape(-1) for a in inner.inputs]
    out = np.full(len(flat), np.nan)
    pending = np.arange(len(flat))
    for attempt in range(int(max_iter)):
        query = Query(inner.body, tuple(a[pending] for a in inputs), inner.inner, inner.name)
        ws = run_weighted(query, flat[pending].substream(attempt))
        lw = np.asarray(ws.logw, dtype=float)
        if not np.all((lw == 0.0) | np.isneginf(lw)):
            raise ConfigError("rejection sampling needs a hard (0/1) condition")
        ok = lw == 0.0
        out[pending[ok]] = np.asarray(ws.value, dtype=float)[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return out.reshape(shape) if shape else float(out[0])
    raise RuntimeError("acceptance probability too small")
