"""Benchmark models and their closed-form or quadrature ground truths."""

import math

import numpy as np
from scipy import integrate, stats

from .errors import ParameterError
from .estimators import NestedProblem, budget_runs, chunk_ranges, rejection_exact_sample
from .numerics import log_mean_exp, log_sum_exp
from .ppl import Beta, Categorical, Gamma, Normal, Query, Trace, Uniform, run_weighted
from .schedules import BudgetPolicy

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _normal_logpdf(x, mean, std):
    with np.errstate(over="ignore"):
        z = (x - mean) / std
        return -0.5 * z * z - np.log(std) - _HALF_LOG_2PI


# --- analytic model ---------------------------------------------------------
#   y0 ~ U(-1, 1),  y1 ~ N(0, 1),  f1 = sqrt(2/pi) exp(-2 (y0 - y1)^2),  f0 = log(gamma1)


def analytic_inner_fn(y0, y1):
    """``f1``: the N(y1; y0, variance 1/4) density."""
    return math.sqrt(2.0 / math.pi) * np.exp(-2.0 * (y0 - y1) ** 2)


def analytic_problem():
    """Depth-one problem estimating ``E[log E[f1(y0, y1) | y0]]``."""
    return NestedProblem(
        samplers=(
            lambda t: t.sample(Uniform(-1.0, 1.0)),
            lambda t, y0: t.sample(Normal(0.0, 1.0)),
        ),
        functions=(lambda y0, inner: np.log(inner), analytic_inner_fn),
        name="analytic",
    )


def analytic_gamma1(y0):
    """``gamma1(y0) = N(y0; 0, variance 5/4)``."""
    y0 = np.asarray(y0, dtype=float)
    out = np.exp(-2.0 * y0 * y0 / 5.0) / math.sqrt(2.0 * math.pi * 1.25)
    return float(out) if out.ndim == 0 else out


def analytic_gamma0():
    """``E[log gamma1(y0)]`` for ``y0 ~ U(-1, 1)``."""
    return 0.5 * math.log(2.0 / (5.0 * math.pi)) - 2.0 / 15.0


# --- beta-gamma model -------------------------------------------------------
#   y ~ Beta(2, 3); inner: z ~ Gamma(y, 1), observe D ~ N(y, z); return y z

BG_DEFAULT_D = 2.0
BG_DISCRETE_ATOMS = (0.25, 0.5, 0.75)
# Beta(2, 3) density at the atoms, renormalised: (0.45, 0.40, 0.15).
BG_DISCRETE_PROBS = tuple(
    float(p) for p in np.array([a * (1 - a) ** 2 for a in BG_DISCRETE_ATOMS]) / sum(a * (1 - a) ** 2 for a in BG_DISCRETE_ATOMS)
)


def bg_inner_logweight(y, z, D):
    """Log density of observing ``D`` under ``N(y, z)``; ``-inf`` for ``z <= 0``."""
    y, z = np.asarray(y, dtype=float), np.asarray(z, dtype=float)
    pos = z > 0
    zs = np.where(pos, z, 1.0)
    out = np.where(pos, _normal_logpdf(D, y, zs), -np.inf)
    return float(out) if out.ndim == 0 else out


def _bg_inner(trace, y, D):
    # Gamma draws for tiny shapes can underflow to exactly 0; those get zero weight.
    z = trace.sample(Gamma(y, 1.0))
    trace.factor(bg_inner_logweight(y, z, D))
    return z


def _bg_outer(trace, D):
    y = trace.sample(Beta(2.0, 3.0))
    z = trace.sample_nested(y, D)
    return y * z


def _bg_outer_discrete(trace, D):
    atoms = np.array(BG_DISCRETE_ATOMS)
    k = trace.sample(Categorical(np.log(BG_DISCRETE_PROBS)))
    y = atoms[k.astype(np.int64)]
    z = trace.sample_nested(y, D)
    return y * z


def _bg_unnested(trace, D):
    y = trace.sample(Beta(2.0, 3.0))
    return y * _bg_inner(trace, y, D)


def bg_inner_query():
    """Inner query ``(y, D) -> z``; bind ``y`` (and ``D``) when running it directly."""
    return Query(_bg_inner, (), name="bg-inner")


def bg_outer_query(D=BG_DEFAULT_D, budget=None):
    """Nested query returning ``y * z`` with ``z`` drawn from the inner conditional."""
    return Query(_bg_outer, (float(D),), bg_inner_query(), "bg-outer", budget)


def bg_discrete_query(D=BG_DEFAULT_D, budget=None):
    """Nested query with ``y`` restricted to three atoms."""
    return Query(_bg_outer_discrete, (float(D),), bg_inner_query(), "bg-discrete", budget)


def bg_unnested_query(D=BG_DEFAULT_D):
    """The same program with the inner weight absorbed into the joint model."""
    return Query(_bg_unnested, (float(D),), name="bg-unnested")


def bg_inner_moments(y, D=BG_DEFAULT_D):
    """``(p(D | y), E[z | y, D])`` for the inner conditional, by quadrature."""

    def dens(z):
        return stats.gamma.pdf(z, y) * math.exp(bg_inner_logweight(y, z, D))

    # The likelihood vanishes near z = 0 and the gamma tail beyond ~60.
    upper = max(60.0, 10.0 * y + 60.0)
    norm = integrate.quad(dens, 0.0, upper, limit=200, epsabs=0, epsrel=1e-11)[0]
    first = integrate.quad(lambda z: z * dens(z), 0.0, upper, limit=200, epsabs=0, epsrel=1e-11)[0]
    return norm, first / norm


def bg_nested_truth(D=BG_DEFAULT_D):
    """``E[y z]`` under the nested target (y from the prior, z from the inner conditional)."""

    def integrand(y):
        return stats.beta.pdf(y, 2, 3) * y * bg_inner_moments(y, D)[1]

    return integrate.quad(integrand, 0.0, 1.0, limit=200, epsabs=0, epsrel=1e-10)[0]


def bg_discrete_truth(D=BG_DEFAULT_D):
    return sum(p * y * bg_inner_moments(y, D)[1] for y, p in zip(BG_DISCRETE_ATOMS, BG_DISCRETE_PROBS))


# --- conjugate model --------------------------------------------------------
#   y ~ N(0, 1); inner: theta ~ N(y, 1), observe D ~ N(theta, 1)


def _conj_inner(trace, y, D):
    theta = trace.sample(Normal(y, 1.0))
    trace.observe(Normal(theta, 1.0), D)
    return theta


def _conj_outer(trace, D):
    y = trace.sample(Normal(0.0, 1.0))
    trace.observe_nested(y, D)
    return y


def conjugate_inner_query():
    return Query(_conj_inner, (), name="conj-inner")


def conjugate_outer_query(D=BG_DEFAULT_D):
    """Outer query conditioned through the inner query's partition function."""
    return Query(_conj_outer, (float(D),), conjugate_inner_query(), "conj-outer")


def conjugate_log_marginal(y, D):
    """Exact ``log p(D | y) = log N(D; y, sqrt 2)``."""
    return _normal_logpdf(D, y, math.sqrt(2.0))


def conjugate_posterior(D):
    """Posterior mean and variance of ``y`` given ``D``."""
    return D / 3.0, 2.0 / 3.0


# --- poker ------------------------------------------------------------------

SMALL_BLIND = 1.0
BIG_BLIND = 2.0
MAX_BET = 10.0
BLUFF_PROB = 0.05
BET_NOISE = 2.0


def poker_calc_payoff(p1_hand, p1_bet, p2_hand, p2_call):
    """P1's payoff; a bet below the big blind is a fold, ties go to P2."""
    p1_hand, p1_bet, p2_hand = (np.asarray(a, dtype=float) for a in (p1_hand, p1_bet, p2_hand))
    call = np.asarray(p2_call).astype(bool)
    showdown = np.where(p1_hand > p2_hand, p1_bet, -p1_bet)
    out = np.where(p1_bet < BIG_BLIND, -SMALL_BLIND, np.where(call, showdown, BIG_BLIND))
    return float(out) if out.ndim == 0 else out


def poker_p1_bet_logpdf(hand, bet):
    """P2's model of P1's bet: a hand-dependent normal mixed with uniform bluffs."""
    hand, bet = np.broadcast_arrays(np.asarray(hand, dtype=float), np.asarray(bet, dtype=float))
    mean = np.where(hand < 0.5, 0.0, 8.0 * hand)
    honest = math.log(1.0 - BLUFF_PROB) + _normal_logpdf(bet, mean, BET_NOISE)
    inside = (bet >= 2 * BIG_BLIND) & (bet <= MAX_BET)
    bluff = np.where(inside, math.log(BLUFF_PROB) - math.log(MAX_BET - 2 * BIG_BLIND), -np.inf)
    out = log_sum_exp(np.stack([honest, bluff]), axis=0)
    return float(out) if out.ndim == 0 else out


def _p2_sim(trace, p2_hand, p1_bet):
    p1_hand = trace.sample(Uniform(0.0, 1.0))
    trace.factor(poker_p1_bet_logpdf(p1_hand, p1_bet))
    return (p2_hand > p1_hand).astype(float)


def _p1_payoff(trace, p1_hand, p1_bet):
    p2_hand = trace.sample(Uniform(0.0, 1.0))
    call = trace.sample_nested(p2_hand, p1_bet)
    return poker_calc_payoff(p1_hand, p1_bet, p2_hand, call > 0.5)


def poker_p2_query():
    """P2 decides to call if their hand beats P1's hand inferred from the bet."""
    return Query(_p2_sim, (), name="p2-sim")


def poker_p1_payoff_query(p1_hand, p1_bet, inner_policy):
    """P1's payoff for a hand and bet, with P2 simulated by nested inference."""
    if not 0.0 <= p1_hand <= 1.0:
        raise ParameterError("hand must lie in [0, 1]")
    policy = BudgetPolicy.coerce(inner_policy, 1)
    return Query(_p1_payoff, (float(p1_hand), float(p1_bet)), poker_p2_query(), "p1-payoff", policy)


def poker_call_payoff(p1_hand, n0, rng):
    """MC estimate and standard error of the payoff of calling the big blind."""
    p2 = Uniform(0.0, 1.0).sample(rng.substream(np.arange(n0)))
    pay = poker_calc_payoff(p1_hand, BIG_BLIND, p2, True)
    return float(pay.mean()), float(pay.std(ddof=1) / math.sqrt(n0))


def poker_call_prob(p2_hand, p1_bet):
    """Exact probability that P2 calls: posterior mass of P1 hands below ``p2_hand``."""

    def dens(h):
        return math.exp(poker_p1_bet_logpdf(h, p1_bet))

    total = integrate.quad(dens, 0.0, 1.0, points=[0.5], epsabs=0, epsrel=1e-12)[0]
    if p2_hand <= 0:
        return 0.0
    pts = [0.5] if p2_hand > 0.5 else None
    return integrate.quad(dens, 0.0, min(p2_hand, 1.0), points=pts, epsabs=0, epsrel=1e-12)[0] / total


def poker_payoff_truth(p1_hand, p1_bet):
    """Expected P1 payoff as the inner budget grows without bound, by quadrature."""
    if p1_bet < BIG_BLIND:
        return -SMALL_BLIND

    def integrand(p2):
        call = poker_call_prob(p2, p1_bet)
        show = p1_bet if p1_hand > p2 else -p1_bet
        return call * show + (1.0 - call) * BIG_BLIND

    pts = sorted({min(max(p1_hand, 0.0), 1.0), 0.5})
    return integrate.quad(integrand, 0.0, 1.0, points=pts, limit=200, epsabs=1e-11, epsrel=1e-11)[0]


def poker_naive_truth(p1_hand, p1_bet):
    """Expected payoff when P2 calls iff their hand beats a uniform draw."""
    if p1_bet < BIG_BLIND:
        return -SMALL_BLIND
    h = min(max(p1_hand, 0.0), 1.0)
    # P(call | p2) = p2; integrate call * show + (1 - call) * big blind over p2.
    win = p1_bet * h * h / 2.0 - p1_bet * (1.0 - h * h) / 2.0
    return win + BIG_BLIND / 2.0


# --- Bayesian experimental design ------------------------------------------
#   theta ~ N(0, 1), y ~ N(theta, d); estimate E[log p(y | theta) - log p(y)]


def bed_mi_analytic(d):
    """Mutual information between ``theta`` and ``y``: ``0.5 log(1 + 1/d^2)``."""
    if not d > 0:
        raise ParameterError("design d must be > 0")
    return 0.5 * math.log1p(1.0 / (d * d))


def _bed_inner(trace, y, d):
    theta = trace.sample(Normal(0.0, 1.0))
    trace.observe(Normal(theta, d), y)
    return theta


def bed_values(d, n, m, rng):
    """Per-outer-sample values ``log p(y|theta) - log p_hat(y)``.

    ``m`` is a fixed inner budget or a Schedule; the inner partition
    estimate for outer sample ``n`` uses ``rng.substream(n).substream(j)``.
    """
    if not d > 0:
        raise ParameterError("design d must be > 0")
    policy = BudgetPolicy.coerce(m, 1)
    inner = Query(_bed_inner)
    out = np.empty(n)
    for s, e, (mm,) in budget_runs(policy, n):
        for cs, ce in chunk_ranges(s, e, mm):
            streams = rng.substream(np.arange(cs, ce))
            trace = Trace(streams)
            theta = trace.sample(Normal(0.0, 1.0))
            y = trace.sample(Normal(theta, d))
            loglik = _normal_logpdf(y, theta, d)
            ws = run_weighted(inner.bind(y[:, None], d), streams[:, None].substream(np.arange(mm)))
            out[cs:ce] = loglik - log_mean_exp(ws.logw, axis=-1)
    return out


def bed_estimate(d, n, m, rng):
    """NMC estimate of the expected information gain and its standard error."""
    v = bed_values(d, n, m, rng)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan


# --- dice model (exact inner sampling) --------------------------------------
#   y ~ die; inner: z ~ die conditioned on z >= y; estimate E[z] = 4.75

DICE_TRUTH = 4.75


def _dice_inner(trace, y):
    z = 1.0 + trace.sample(Categorical(np.zeros(6)))
    trace.condition(z >= y)
    return z


def dice_inner_query():
    return Query(_dice_inner, (), name="dice-inner")


def dice_estimate(n0, rng):
    """Plain MC over the outer die with exact rejection samples from the inner query."""
    streams = rng.substream(np.arange(n0))
    y = 1.0 + Categorical(np.zeros(6)).sample(streams)
    z = rejection_exact_sample(dice_inner_query().bind(y), streams.substream(1))
    return float(np.mean(z))
