"""Nested Monte Carlo, online NMC and nested inference for vectorised probabilistic programs."""

__version__ = "0.1.0"

from .errors import ConfigError, DegenerateWeightsError, ParameterError
from .numerics import (
    RngStream,
    categorical_from_logweights,
    log_mean_exp,
    log_sum_exp,
    normalize_logweights,
)
from .ppl import (
    Beta,
    Categorical,
    EmpiricalMeasure,
    Gamma,
    Normal,
    Query,
    Trace,
    Uniform,
    WeightedSample,
    log_marginal,
    logpdf,
    run_weighted,
    sample,
)
from .schedules import BudgetPolicy, RateConstants, Schedule, cost_ratio_c, g_factor, tau_eval
from .estimators import (
    EstimatorVariant,
    NestedProblem,
    OnlineNMC,
    finite_support_estimate,
    mc_estimate,
    nested_conditioning_estimate,
    nested_is_measure,
    nested_is_single,
    nmc_estimate,
    onmc_estimate,
    rejection_exact_sample,
)
