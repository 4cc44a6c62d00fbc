"""Command-line entry point: ``nestmc {sweep,density,poker-grid,bed,constants}``."""

import argparse
import csv
import logging
import math
import sys

import numpy as np

from . import __version__, estimators as est, harness, models, schedules
from .errors import ConfigError, DegenerateWeightsError
from .numerics import RngStream
from .schedules import Schedule

EXIT_CONFIG = 2
EXIT_DEGENERATE = 3

_ESTIMATOR_VARIANTS = {
    "nested-is-rb": "rb",
    "nested-is-single": "single_sample",
    "naive": "naive_n1_equals_1",
    "broken": "broken_conditional_n1_equals_2",
}


def _int(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v != int(v):
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(v)


def _budgets(text):
    try:
        return tuple(_int(t) for t in text.split(",") if t.strip())
    except argparse.ArgumentTypeError as exc:
        raise argparse.ArgumentTypeError(f"bad budget list {text!r}: {exc}") from None


def _schedule(text):
    try:
        return Schedule.parse(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _inner(args):
    if args.schedule is not None and args.n1 is not None:
        raise ConfigError("give either --schedule or --n1, not both")
    return args.schedule if args.schedule is not None else args.n1


def _common(p):
    p.add_argument("--model", default="analytic", help=f"one of: {', '.join(harness.MODELS)}")
    p.add_argument("--estimator", default="nmc", help=f"one of: {', '.join(harness.ESTIMATORS)}")
    p.add_argument("--schedule", type=_schedule, help="const:N | sqrt-floor:F | sqrt-cap:C | poly:A,alpha[,B]")
    p.add_argument("--n1", type=_int, help="fixed inner budget (default: N1 = ceil(sqrt(N0)) split)")
    p.add_argument("--seed", type=_int, default=0)
    p.add_argument("--data-D", dest="data_D", type=float, default=models.BG_DEFAULT_D, help="observation D")
    p.add_argument("--tmin", type=_int, help="T_min of the default ONMC schedule (default: smallest budget)")
    p.add_argument("--out", help="output CSV path")


def build_parser():
    parser = argparse.ArgumentParser(prog="nestmc", description="Nested Monte Carlo estimators and experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="replicated runs over a ladder of total budgets")
    _common(p)
    p.add_argument("--budgets", type=_budgets, required=True, help="T1,T2,... (e.g. 1e3,1e4,1e5)")
    p.add_argument("--replicates", type=_int, default=10)
    p.add_argument("--workers", type=_int, default=1)
    p.add_argument("--hand", type=float, default=0.1, help="poker: P1 hand strength")
    p.add_argument("--bet", type=float, default=6.0, help="poker: P1 bet")
    p.add_argument("--design-d", dest="design_d", type=float, default=1.0, help="bed: design d")
    p.add_argument("--tail", type=float, default=0.5, help="fraction of ladder points used in the slope fit")
    p.add_argument("--truth", choices=("oracle", "reference"), default="oracle")
    p.add_argument("--no-timing", action="store_true", help="write zero wall times (byte-reproducible CSV)")

    p = sub.add_parser("density", help="weighted histograms and KS statistics for nested inference")
    _common(p)
    p.set_defaults(model="beta-gamma")
    p.add_argument("--estimators", default="nested-is-single,naive,broken", help="comma-separated list")
    p.add_argument("--n0", type=_int, default=100_000)
    p.add_argument("--ref-n0", type=_int, default=100_000)
    p.add_argument("--ref-n1", type=_int, default=1000)
    p.add_argument("--bins", type=_int, default=60)
    p.add_argument("--range", dest="value_range", type=_floats, help="lo,hi of the histogram")

    p = sub.add_parser("poker-grid", help="expected P1 payoff on a hand x bet grid")
    p.add_argument("--estimator", default="nested-is-rb", choices=("nested-is-rb", "nested-is-single", "naive"))
    p.add_argument("--n0", type=_int, default=10_000)
    p.add_argument("--n1", type=_int, default=100)
    p.add_argument("--schedule", type=_schedule)
    p.add_argument("--hands", type=_floats, default=list(harness.POKER_HANDS))
    p.add_argument("--bets", type=_floats, default=list(harness.POKER_BETS))
    p.add_argument("--seed", type=_int, default=0)
    p.add_argument("--out", help="output CSV path")

    p = sub.add_parser("bed", help="expected information gain of a linear-Gaussian design")
    p.add_argument("--d", type=float, default=1.0, help="likelihood standard deviation (design)")
    p.add_argument("--n", type=_int, default=10_000, help="outer samples")
    p.add_argument("--m", type=_int, default=None, help="fixed inner samples")
    p.add_argument("--schedule", type=_schedule, help="inner-sample schedule instead of --m")
    p.add_argument("--seed", type=_int, default=0)

    p = sub.add_parser("constants", help="print ONMC cost ratios, bias factors and bounds")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--depths", default="1,2,3,4,5")
    p.add_argument("--n0", type=_int, default=10**6, help="N0 for the g factor")
    p.add_argument("--varsigma", type=_floats, help="bound constants varsigma_0..varsigma_D")
    p.add_argument("--C", type=_floats, default=None)
    p.add_argument("--K", type=_floats, default=None)
    p.add_argument("--budgets", type=_budgets, help="N0,N1,...,ND for the NMC bound")
    return parser


def _cmd_sweep(args, out):
    cfg = harness.SweepConfig(
        model=args.model, estimator=args.estimator, budgets=args.budgets, replicates=args.replicates,
        seed=args.seed, inner=_inner(args), tmin=args.tmin, data_D=args.data_D, hand=args.hand,
        bet=args.bet, design_d=args.design_d, truth_mode=args.truth,
    )
    records = harness.run_sweep(cfg, workers=args.workers, timed=not args.no_timing)
    if args.out:
        harness.write_csv(records, args.out)
        harness.write_manifest(
            args.out + ".manifest", version=__version__, model=cfg.model, estimator=cfg.estimator,
            budgets=",".join(map(str, cfg.budgets)), replicates=cfg.replicates, seed=cfg.seed,
            inner="default" if cfg.inner is None else cfg.inner, tmin=cfg.tmin, data_D=cfg.data_D,
            hand=cfg.hand, bet=cfg.bet, design_d=cfg.design_d, truth_mode=cfg.truth_mode,
            truth=records[0].truth, records=len(records), numpy=np.__version__,
        )
    else:
        harness.write_csv(records, out)
    print("T,N0,mean_sq_error,sem,median,q25,q75", file=sys.stderr)
    n0 = {r.T: r.N0 for r in records}
    for s in harness.summarize(records):
        print(f"{s.T},{n0[s.T]},{s.mean:.6g},{s.sem:.3g},{s.median:.6g},{s.q25:.6g},{s.q75:.6g}", file=sys.stderr)
    try:
        slope, se = harness.fit_loglog_slope(records, args.tail)
        print(f"slope={slope:.4f} stderr={se:.4f}", file=sys.stderr)
    except ValueError:
        pass
    return 0


def _density_measure(name, args, rng):
    variant = _ESTIMATOR_VARIANTS.get(name)
    if variant is None:
        raise ConfigError(f"estimator {name!r} does not give a measure; choose from {', '.join(_ESTIMATOR_VARIANTS)}")
    q = models.bg_outer_query(args.data_D) if args.model == "beta-gamma" else models.bg_discrete_query(args.data_D)
    inner = _inner(args)
    if variant == "rb":
        n1 = inner if inner is not None else math.isqrt(args.n0 - 1) + 1
        return est.nested_is_measure(q, args.n0, n1, rng)
    if variant == "single_sample" and inner is None:
        inner = Schedule.recommended(args.tmin if args.tmin is not None else args.ref_n0 * args.ref_n1)
    return est.nested_is_single(q, args.n0, variant, rng, n1=inner)


def _cmd_density(args, out):
    if args.model not in ("beta-gamma", "beta-gamma-discrete"):
        raise ConfigError("density supports the beta-gamma models")
    root = RngStream.from_seed(args.seed)
    q = models.bg_outer_query(args.data_D) if args.model == "beta-gamma" else models.bg_discrete_query(args.data_D)
    measures = {"reference": est.nested_is_measure(q, args.ref_n0, args.ref_n1, root.substream(0))}
    for i, name in enumerate(n for n in args.estimators.split(",") if n):
        measures[name] = _density_measure(name, args, root.substream(i + 1))
    rep = harness.density_compare(measures, args.bins, args.value_range)
    names = list(rep.masses)
    target = open(args.out, "w", newline="") if args.out else out
    try:
        w = csv.writer(target, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", *names])
        for k in range(rep.edges.size - 1):
            w.writerow([repr(float(rep.edges[k])), repr(float(rep.edges[k + 1]))] + [repr(float(rep.masses[n][k])) for n in names])
    finally:
        if args.out:
            target.close()
    print("a,b,ks,critical_1pct,differs", file=sys.stderr)
    for a, b, d, crit, above in rep.ks_table():
        print(f"{a},{b},{d:.5f},{crit:.5f},{above}", file=sys.stderr)
    return 0


def _cmd_poker(args, out):
    policy = args.schedule if args.schedule is not None else args.n1
    variant = {"nested-is-rb": "rb", "nested-is-single": "single_sample", "naive": "naive_n1_equals_1"}[args.estimator]
    pay, err = harness.poker_grid(args.hands, args.bets, args.n0, policy, RngStream.from_seed(args.seed), variant)
    if args.out:
        harness.write_grid_csv(args.hands, args.bets, pay, err, args.out)
    else:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("hand", "bet", "payoff", "stderr"))
        for i, h in enumerate(args.hands):
            for j, b in enumerate(args.bets):
                w.writerow((h, b, repr(float(pay[i, j])), repr(float(err[i, j]))))
    return 0


def _cmd_bed(args, out):
    if (args.m is None) == (args.schedule is None):
        raise ConfigError("give exactly one of --m and --schedule")
    inner = args.schedule if args.schedule is not None else args.m
    value, se = models.bed_estimate(args.d, args.n, inner, RngStream.from_seed(args.seed))
    truth = models.bed_mi_analytic(args.d)
    print(f"estimate={value:.6f} stderr={se:.6f} analytic={truth:.6f} z={(value - truth) / se:.2f}", file=out)
    return 0


def _cmd_constants(args, out):
    depths = [math.inf if d.strip() in ("inf", "infinity") else int(d) for d in args.depths.split(",")]
    print(f"alpha={args.alpha:g} N0={args.n0}", file=out)
    print(f"g={schedules.g_factor(args.alpha, args.n0):.6g}", file=out)
    for d in depths:
        c = schedules.cost_ratio_c(args.alpha, d)
        infl = c ** args.alpha * schedules.g_factor(args.alpha, args.n0)
        print(f"D={d} c={c:.3f} bias_inflation={infl:.4f}", file=out)
    if args.varsigma is not None:
        depth = len(args.varsigma) - 1
        consts = schedules.RateConstants(
            tuple(args.varsigma), tuple(args.C or [1.0] * depth), tuple(args.K or [1.0] * depth)
        )
        print(f"beta={schedules.beta_constant(consts):.6g}", file=out)
        if args.budgets:
            print(f"nmc_bound={schedules.nmc_mse_bound(consts, args.budgets):.6g}", file=out)
        print(f"onmc_bound={schedules.onmc_mse_bound(consts, args.n0, 1.0, args.alpha):.6g}", file=out)
    return 0


_COMMANDS = {
    "sweep": _cmd_sweep,
    "density": _cmd_density,
    "poker-grid": _cmd_poker,
    "bed": _cmd_bed,
    "constants": _cmd_constants,
}


def main(argv=None, out=None):
    """Run the CLI; returns the process exit code."""
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateWeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
