"""Budget sweeps, error summaries, slope fits, density comparison and poker grids."""

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field, fields
import functools
import io
import math
import time

import numpy as np
from scipy import stats

from . import estimators as est
from . import models
from .errors import ConfigError
from .numerics import RngStream
from .schedules import BudgetPolicy, Schedule

MODELS = ("analytic", "beta-gamma", "beta-gamma-discrete", "conjugate", "poker", "bed", "dice")
ESTIMATORS = (
    "mc", "nmc", "onmc", "nested-is-rb", "nested-is-single",
    "naive", "broken", "nested-cond", "finite-support",
)

_SUPPORTED = {
    "analytic": {"nmc", "onmc"},
    "beta-gamma": {"nested-is-rb", "nested-is-single", "naive", "broken"},
    "beta-gamma-discrete": {"finite-support", "nested-is-rb", "nested-is-single", "naive", "broken"},
    "conjugate": {"nested-cond"},
    "poker": {"nested-is-rb", "nested-is-single", "naive", "broken"},
    "bed": {"nmc", "onmc"},
    "dice": {"mc"},
}

CSV_HEADER = ("model", "estimator", "T", "N0", "inner_budget", "seed", "estimate", "truth", "abs_error", "sq_error", "wall_time_s")

# Substream index for reference runs; sweep points use substream(T) with T < 2**62.
REFERENCE_TAG = 1 << 63
REFERENCE_FACTOR = 100


@dataclass(frozen=True)
class SweepConfig:
    """One budget sweep.

    ``inner`` is ``None`` (use the estimator's default split or schedule), a
    fixed inner budget, or a Schedule.  Replicate ``r`` uses seed
    ``seed + r`` and, at budget ``T``, the stream
    ``RngStream.from_seed(seed + r).substream(T)``.
    """

    model: str
    estimator: str
    budgets: tuple
    replicates: int = 10
    seed: int = 0
    inner: "int | Schedule | None" = None
    tmin: "int | None" = None
    data_D: float = models.BG_DEFAULT_D
    hand: float = 0.1
    bet: float = 6.0
    design_d: float = 1.0
    truth_mode: str = "oracle"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; choose from {', '.join(ESTIMATORS)}")
        if self.estimator not in _SUPPORTED[self.model]:
            raise ConfigError(
                f"estimator {self.estimator!r} not available for model {self.model!r}; "
                f"choose from {', '.join(sorted(_SUPPORTED[self.model]))}"
            )
        b = tuple(int(t) for t in self.budgets)
        if not b or any(t < 1 for t in b) or any(x >= y for x, y in zip(b, b[1:])):
            raise ConfigError("budget ladder must be positive and strictly increasing")
        object.__setattr__(self, "budgets", b)
        if self.replicates < 2:
            raise ConfigError("need at least 2 replicates")
        if self.truth_mode not in ("oracle", "reference"):
            raise ConfigError("truth_mode must be 'oracle' or 'reference'")
        if isinstance(self.inner, (int, np.integer)) and self.inner < 1:
            raise ConfigError("inner budget must be >= 1")

    @property
    def default_schedule(self):
        return Schedule.recommended(self.tmin if self.tmin is not None else self.budgets[0])


@dataclass(frozen=True)
class RunRecord:
    model: str
    estimator: str
    T: int
    N0: int
    inner_budget: str
    seed: int
    estimate: float
    truth: "float | None" = None
    abs_error: "float | None" = None
    sq_error: "float | None" = None
    wall_time_s: float = 0.0

    def to_row(self):
        def fmt(v):
            if v is None:
                return ""
            return repr(float(v)) if isinstance(v, float) else str(v)

        return [fmt(getattr(self, f.name)) for f in fields(self)]

    @classmethod
    def from_row(cls, row):
        if len(row) != len(CSV_HEADER):
            raise ValueError("wrong number of CSV columns")
        m, e, t, n0, inner, seed, estimate, truth, ae, se, wall = row

        def opt(v):
            return None if v == "" else float(v)

        return cls(m, e, int(t), int(n0), inner, int(seed), float(estimate), opt(truth), opt(ae), opt(se), float(wall))


def write_csv(records, out):
    """Write records with the fixed header; ``out`` is a path or text file."""
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", newline="") as fh:
            return write_csv(records, fh)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.to_row())


def read_csv(src):
    if isinstance(src, (str, bytes)) or hasattr(src, "__fspath__"):
        with open(src, newline="") as fh:
            return read_csv(fh)
    rows = list(csv.reader(src))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    return [RunRecord.from_row(r) for r in rows[1:]]


def csv_text(records):
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


def write_manifest(path, **items):
    """Plain ``key=value`` lines, sorted by key."""
    with open(path, "w") as fh:
        for k in sorted(items):
            fh.write(f"{k}={items[k]}\n")


def read_manifest(path):
    with open(path) as fh:
        return dict(line.rstrip("\n").split("=", 1) for line in fh if "=" in line)


# --- budget allocation ------------------------------------------------------


def sqrt_split(total):
    """Largest ``N0`` with ``N0 * ceil(sqrt(N0)) <= total``, and that ``N1``."""
    total = int(total)
    if total < 1:
        raise ConfigError("budget must be >= 1")
    n0 = max(1, int(total ** (2.0 / 3.0)) + 2)
    while n0 > 1 and n0 * _ceil_sqrt(n0) > total:
        n0 -= 1
    return n0, _ceil_sqrt(n0)


def _ceil_sqrt(n):
    r = math.isqrt(n)
    return r if r * r == n else r + 1


def _fixed_split(total, n1):
    if total < n1:
        raise ConfigError(f"budget {total} smaller than inner budget {n1}")
    return total // n1, n1


def _nested_budget(cfg, total, schedule_default):
    """``(N0, budget, descriptor)`` for a one-level nested estimator at budget ``total``."""
    inner = cfg.inner
    if inner is None and schedule_default:
        inner = cfg.default_schedule
    if inner is None:
        n0, n1 = sqrt_split(total)
        return n0, n1, f"sqrt-split:{n1}"
    if isinstance(inner, Schedule):
        return BudgetPolicy.coerce(inner, 1).outer_count(total), inner, str(inner)
    n0, n1 = _fixed_split(total, int(inner))
    return n0, n1, str(n1)


# --- single runs ------------------------------------------------------------


def model_truth(cfg):
    """Closed-form or quadrature ground truth for the swept quantity."""
    m = cfg.model
    if m == "analytic":
        return models.analytic_gamma0()
    if m == "beta-gamma":
        return _bg_truth(cfg.data_D)
    if m == "beta-gamma-discrete":
        return _bg_discrete_truth(cfg.data_D)
    if m == "conjugate":
        return models.conjugate_posterior(cfg.data_D)[0]
    if m == "poker":
        return models.poker_payoff_truth(cfg.hand, cfg.bet)
    if m == "bed":
        return models.bed_mi_analytic(cfg.design_d)
    return models.DICE_TRUTH


@functools.lru_cache(maxsize=None)
def _bg_truth(D):
    return models.bg_nested_truth(D)


@functools.lru_cache(maxsize=None)
def _bg_discrete_truth(D):
    return models.bg_discrete_truth(D)


def _outer_query(cfg, budget=None):
    if cfg.model == "beta-gamma":
        return models.bg_outer_query(cfg.data_D, budget)
    if cfg.model == "beta-gamma-discrete":
        return models.bg_discrete_query(cfg.data_D, budget)
    if cfg.model == "poker":
        return models.poker_p1_payoff_query(cfg.hand, cfg.bet, budget if budget is not None else 1)
    raise ConfigError(f"model {cfg.model!r} has no outer query")


def run_estimator(cfg, total, rng):
    """Run the configured estimator at total budget ``total``; return ``(estimate, N0, descriptor)``."""
    e, m = cfg.estimator, cfg.model
    if e == "mc":
        return models.dice_estimate(total, rng), total, "exact"
    if e in ("nmc", "onmc"):
        if e == "onmc":
            sched = cfg.inner if cfg.inner is not None else cfg.default_schedule
            if not isinstance(sched, Schedule):
                sched = Schedule.constant(int(sched))
            n0, budget, desc = BudgetPolicy.coerce(sched, 1).outer_count(total), sched, str(sched)
        else:
            if isinstance(cfg.inner, Schedule):
                raise ConfigError("nmc needs a fixed inner budget; use onmc for schedules")
            n0, budget, desc = _nested_budget(cfg, total, schedule_default=False)
        if m == "analytic":
            problem = models.analytic_problem()
            value = est.onmc_estimate(problem, n0, budget, rng) if e == "onmc" else est.nmc_estimate(problem, n0, budget, rng)
        else:
            value = float(np.mean(models.bed_values(cfg.design_d, n0, budget, rng)))
        return value, n0, desc
    if e == "nested-is-rb":
        n0, budget, desc = _nested_budget(cfg, total, schedule_default=False)
        return est.nested_is_measure(_outer_query(cfg), n0, budget, rng).mean(), n0, desc
    if e == "nested-is-single":
        n0, budget, desc = _nested_budget(cfg, total, schedule_default=True)
        measure = est.nested_is_single(_outer_query(cfg), n0, "single_sample", rng, n1=budget)
        return measure.mean(), n0, desc
    if e == "naive":
        measure = est.nested_is_single(_outer_query(cfg), total, "naive_n1_equals_1", rng)
        return measure.mean(), total, "1"
    if e == "broken":
        n0 = _fixed_split(total, 2)[0]
        measure = est.nested_is_single(_outer_query(cfg), n0, "broken_conditional_n1_equals_2", rng)
        return measure.mean(), n0, "2"
    if e == "nested-cond":
        mm = 10 if cfg.inner is None else cfg.inner
        if isinstance(mm, Schedule):
            raise ConfigError("nested conditioning needs a fixed inner budget")
        n0 = _fixed_split(total, int(mm))[0]
        measure = est.nested_conditioning_estimate(models.conjugate_outer_query(cfg.data_D), n0, int(mm), rng)
        return measure.mean(), n0, str(int(mm))
    # finite-support
    inner = models.bg_inner_query().bind(cfg.data_D)
    value = est.finite_support_estimate(
        models.BG_DISCRETE_ATOMS, models.BG_DISCRETE_PROBS, inner, total, rng, fn=lambda y, z: y * z
    )
    return value, total, f"{total // len(models.BG_DISCRETE_ATOMS)}/atom"


def reference_truth(cfg):
    """Truth from one run at ``100 x`` the largest ladder budget on a reserved substream."""
    rng = RngStream.from_seed(cfg.seed).substream(REFERENCE_TAG)
    return run_estimator(cfg, REFERENCE_FACTOR * cfg.budgets[-1], rng)[0]


def _run_point(cfg, total, rep, truth, timed):
    seed = cfg.seed + rep
    rng = RngStream.from_seed(seed).substream(total)
    t0 = time.perf_counter()
    value, n0, desc = run_estimator(cfg, total, rng)
    wall = time.perf_counter() - t0 if timed else 0.0
    err = None if truth is None else abs(value - truth)
    return RunRecord(
        cfg.model, cfg.estimator, total, n0, desc, seed, float(value), truth, err,
        None if err is None else err * err, wall,
    )


def run_sweep(cfg, workers=1, timed=True, truth=None):
    """All ``replicates x len(budgets)`` runs, sorted by ``(T, seed)``.

    Results do not depend on ``workers``.  With ``timed=False`` the wall
    time column is zero, so reruns are byte-identical.
    """
    if truth is None:
        truth = model_truth(cfg) if cfg.truth_mode == "oracle" else reference_truth(cfg)
    jobs = [(total, rep) for total in cfg.budgets for rep in range(cfg.replicates)]
    if workers <= 1:
        out = [_run_point(cfg, t, r, truth, timed) for t, r in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_point, cfg, t, r, truth, timed) for t, r in jobs]
            out = [f.result() for f in futs]
    return sorted(out, key=lambda r: (r.T, r.seed))


# --- summaries ----------------------------------------------------------------


@dataclass(frozen=True)
class ErrorSummary:
    """Squared-error statistics at one ladder point."""

    T: int
    n: int
    mean: float
    sem: float
    median: float
    q25: float
    q75: float


def summarize(records):
    """Per-``T`` mean, standard error, median and 25-75% quantiles of ``sq_error``."""
    by_t = {}
    for r in records:
        if r.sq_error is None:
            raise ValueError("records carry no truth")
        by_t.setdefault(r.T, []).append(r.sq_error)
    out = []
    for t in sorted(by_t):
        e = np.array(by_t[t])
        sem = float(e.std(ddof=1) / math.sqrt(e.size)) if e.size > 1 else math.nan
        q25, med, q75 = np.quantile(e, [0.25, 0.5, 0.75])
        out.append(ErrorSummary(t, e.size, float(e.mean()), sem, float(med), float(q25), float(q75)))
    return out


def fit_loglog_slope(records, tail_fraction=0.5):
    """OLS slope (and its standard error) of log10 mean squared error on log10 T.

    Only the largest ``tail_fraction`` of ladder points enter the fit.
    """
    summ = summarize(records)
    k = math.ceil(tail_fraction * len(summ))
    tail = summ[len(summ) - k:]
    if len(tail) < 3:
        raise ValueError("need at least 3 ladder points in the fit window")
    x = np.log10([s.T for s in tail])
    y = np.log10([s.mean for s in tail])
    fit = stats.linregress(x, y)
    return float(fit.slope), float(fit.stderr)


# --- density comparison ---------------------------------------------------------


def ks_critical(n1, n2, alpha=0.01):
    """Asymptotic two-sample KS critical value for sample sizes ``n1`` and ``n2``."""
    return math.sqrt(-math.log(alpha / 2.0) / 2.0) * math.sqrt(1.0 / n1 + 1.0 / n2)


def weighted_ks(a, b, chunk=1 << 22):
    """Exact ``sup_x |F_a(x) - F_b(x)|`` for two weighted empirical measures.

    Only the measure with fewer atoms is sorted; the other is streamed in
    chunks, so a reference measure with ~1e8 atoms fits in memory.
    """
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    order = np.argsort(small.values, kind="stable")
    u, first = np.unique(small.values[order], return_index=True)
    fs = np.cumsum(small.weights[order])
    last = np.append(first[1:], order.size) - 1
    f_small = fs[last]  # F_small(u_i)
    f_small_left = np.concatenate(([0.0], f_small[:-1]))  # F_small(u_i-)
    at_or_below = np.zeros(u.size + 1)
    below = np.zeros(u.size + 1)
    for s in range(0, len(big), chunk):
        v = big.values[s:s + chunk]
        w = big.weights[s:s + chunk]
        at_or_below += np.bincount(np.searchsorted(u, v, side="left"), w, u.size + 1)
        below += np.bincount(np.searchsorted(u, v, side="right"), w, u.size + 1)
    f_big = np.cumsum(at_or_below)[:-1]  # mass <= u_i
    f_big_left = np.cumsum(below)[:-1]  # mass < u_i
    # F_small is flat between atoms and F_big monotone, so endpoints suffice.
    d = max(np.max(np.abs(f_big - f_small)), np.max(np.abs(f_big_left - f_small_left)))
    return float(min(d, 1.0))


@dataclass
class DensityReport:
    """Histograms over common bin edges and pairwise weighted KS statistics."""

    edges: np.ndarray
    masses: dict
    n_eff: dict
    ks: dict = field(default_factory=dict)

    def critical(self, a, b, alpha=0.01):
        return ks_critical(self.n_eff[a], self.n_eff[b], alpha)

    def ks_table(self, alpha=0.01):
        """Rows of ``(a, b, KS, critical value, above)``."""
        return [(a, b, d, self.critical(a, b, alpha), d > self.critical(a, b, alpha)) for (a, b), d in self.ks.items()]


def density_compare(measures, bins=50, value_range=None):
    """Weighted histograms and pairwise KS statistics for named measures.

    Values outside the bin range are counted in the end bins, so every
    histogram sums to one.
    """
    if len(measures) < 2:
        raise ConfigError("need at least two measures to compare")
    for name, m in measures.items():
        if len(m) == 0:
            raise ValueError(f"measure {name!r} is empty")
    if np.ndim(bins) == 0:
        if value_range is None:
            lo = min(float(np.min(m.values)) for m in measures.values())
            hi = max(float(np.max(m.values)) for m in measures.values())
            value_range = (lo, hi if hi > lo else lo + 1.0)
        edges = np.linspace(value_range[0], value_range[1], int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    masses = {}
    for name, m in measures.items():
        idx = np.clip(np.searchsorted(edges, m.values, side="right") - 1, 0, edges.size - 2)
        h = np.bincount(idx, m.weights, edges.size - 1)
        masses[name] = h / h.sum()
    names = list(measures)
    ks = {(a, b): weighted_ks(measures[a], measures[b]) for i, a in enumerate(names) for b in names[i + 1:]}
    return DensityReport(edges, masses, {k: m.n_eff for k, m in measures.items()}, ks)


# --- poker grid ---------------------------------------------------------------

POKER_HANDS = tuple(np.linspace(0.0, 1.0, 17))
POKER_BETS = tuple(np.linspace(4.0, 10.0, 13))


def poker_grid(hands, bets, n0, inner_policy, rng, variant="rb"):
    """Expected P1 payoff and its standard error on a hand x bet grid.

    Cell ``(i, j)`` uses ``rng.substream(i * len(bets) + j)``.  Bets below the
    big blind are folds and cost exactly one unit.
    """
    hands, bets = list(hands), list(bets)
    if not hands or not bets:
        raise ConfigError("poker grid needs at least one hand and one bet")
    pay = np.empty((len(hands), len(bets)))
    err = np.zeros_like(pay)
    for i, h in enumerate(hands):
        for j, b in enumerate(bets):
            if b < models.BIG_BLIND:
                pay[i, j] = models.poker_calc_payoff(h, b, 0.0, False)
                continue
            q = models.poker_p1_payoff_query(h, b, inner_policy)
            cell = rng.substream(i * len(bets) + j)
            if variant == "rb":
                m = est.nested_is_measure(q, n0, None, cell)
            else:
                m = est.nested_is_single(q, n0, variant, cell)
            pay[i, j], err[i, j] = m.mean(), m.stderr()
    return pay, err


def write_grid_csv(hands, bets, payoff, stderr, out):
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("hand", "bet", "payoff", "stderr"))
        for i, h in enumerate(hands):
            for j, b in enumerate(bets):
                w.writerow((repr(float(h)), repr(float(b)), repr(float(payoff[i, j])), repr(float(stderr[i, j]))))
