import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nestmc import harness, models
from nestmc.errors import ConfigError
from nestmc.estimators import nested_is_measure
from nestmc.numerics import RngStream
from nestmc.ppl import EmpiricalMeasure
from nestmc.schedules import Schedule

from oracles import brute_force_ks


def synthetic(errors_by_t):
    return [
        harness.RunRecord("analytic", "nmc", t, t, "", s, 0.0, 0.0, math.sqrt(e), e)
        for t, errs in errors_by_t.items()
        for s, e in enumerate(errs)
    ]


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"model": "nope"},
            {"estimator": "nope"},
            {"estimator": "finite-support"},
            {"budgets": (100, 10)},
            {"budgets": ()},
            {"replicates": 1},
            {"inner": 0},
            {"truth_mode": "guess"},
        ],
    )
    def test_invalid(self, kw):
        base = dict(model="analytic", estimator="nmc", budgets=(10, 100))
        with pytest.raises(ConfigError):
            harness.SweepConfig(**{**base, **kw})

    def test_default_schedule(self):
        # Without T_min the smallest ladder budget sets the floor.
        cfg = harness.SweepConfig("analytic", "onmc", (10**6, 10**7))
        assert cfg.default_schedule == Schedule.sqrt_floor(100)
        assert harness.SweepConfig("analytic", "onmc", (10,), tmin=10**9).default_schedule == Schedule.sqrt_floor(1000)


class TestSplits:
    @given(st.integers(1, 10**9))
    def test_sqrt_split_is_largest(self, total):
        n0, n1 = harness.sqrt_split(total)
        assert n1 == math.isqrt(n0 - 1) + 1
        assert n0 * n1 <= total or n0 == 1
        m = n0 + 1
        assert m * (math.isqrt(m - 1) + 1) > total


class TestCSV:
    records = st.builds(
        harness.RunRecord,
        model=st.sampled_from(harness.MODELS),
        estimator=st.sampled_from(harness.ESTIMATORS),
        T=st.integers(1, 10**12),
        N0=st.integers(1, 10**12),
        inner_budget=st.sampled_from(["25", "sqrt-floor:25", "const:3", ""]),
        seed=st.integers(0, 2**63),
        estimate=st.floats(allow_nan=False, allow_infinity=False),
        truth=st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False)),
        abs_error=st.one_of(st.none(), st.floats(0, 1e300)),
        sq_error=st.one_of(st.none(), st.floats(0, 1e300)),
        wall_time_s=st.floats(0, 1e6),
    )

    @given(st.lists(records, max_size=5))
    def test_roundtrip(self, recs):
        buf = io.StringIO(harness.csv_text(recs))
        assert harness.read_csv(buf) == recs

    def test_header(self):
        text = harness.csv_text([])
        assert text.splitlines()[0] == "model,estimator,T,N0,inner_budget,seed,estimate,truth,abs_error,sq_error,wall_time_s"

    def test_manifest(self, tmp_path):
        p = tmp_path / "run.manifest"
        harness.write_manifest(p, model="analytic", seed=3)
        assert harness.read_manifest(p) == {"model": "analytic", "seed": "3"}


class TestSweep:
    def test_records_and_determinism(self):
        cfg = harness.SweepConfig("analytic", "nmc", (100, 1000), replicates=2, seed=5)
        a, b = harness.run_sweep(cfg, timed=False), harness.run_sweep(cfg, timed=False)
        assert len(a) == 4
        assert harness.csv_text(a) == harness.csv_text(b)
        for r in a:
            assert r.sq_error == pytest.approx(r.abs_error**2)
            assert r.truth == models.analytic_gamma0()

    def test_worker_count_invariant(self):
        cfg = harness.SweepConfig("beta-gamma", "nested-is-rb", (400, 1600, 3600), replicates=3, seed=1)
        serial = harness.run_sweep(cfg, workers=1, timed=False)
        assert harness.csv_text(serial) == harness.csv_text(harness.run_sweep(cfg, workers=3, timed=False))

    def test_sorted_by_budget_then_seed(self):
        cfg = harness.SweepConfig("dice", "mc", (10, 20), replicates=3, seed=7)
        keys = [(r.T, r.seed) for r in harness.run_sweep(cfg)]
        assert keys == sorted(keys) and keys[0] == (10, 7)

    @pytest.mark.parametrize(
        "model,estimator",
        [(m, e) for m in harness.MODELS for e in sorted(harness._SUPPORTED[m])],
    )
    def test_every_supported_pair_runs(self, model, estimator):
        cfg = harness.SweepConfig(model, estimator, (64, 256), replicates=2)
        for r in harness.run_sweep(cfg):
            assert math.isfinite(r.estimate) and r.N0 >= 1

    def test_reference_protocol(self):
        cfg = harness.SweepConfig("beta-gamma", "nested-is-rb", (100, 400), replicates=2, truth_mode="reference")
        ref = harness.reference_truth(cfg)
        assert abs(ref - models.bg_nested_truth(2.0)) < 0.05
        assert all(r.truth == ref for r in harness.run_sweep(cfg))


class TestSlope:
    def test_exact_power_law(self):
        slope, _ = harness.fit_loglog_slope(synthetic({t: [100 / t] * 3 for t in (10, 100, 1000, 10**4, 10**5, 10**6)}))
        assert slope == pytest.approx(-1.0, abs=1e-9)

    def test_noisy_two_thirds(self):
        rs = np.random.default_rng(0)
        ts = np.logspace(2, 7, 11).astype(int)
        recs = synthetic({int(t): list(5 * t ** (-2 / 3) * rs.lognormal(0, 0.1, 20)) for t in ts})
        slope, se = harness.fit_loglog_slope(recs)
        assert abs(slope + 2 / 3) < 3 * se

    def test_plateau(self):
        rs = np.random.default_rng(1)
        recs = synthetic({int(t): list(0.3 * rs.lognormal(0, 0.1, 20)) for t in np.logspace(2, 7, 11)})
        slope, se = harness.fit_loglog_slope(recs)
        assert abs(slope) < 3 * se

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            harness.fit_loglog_slope(synthetic({10: [1.0], 100: [0.1], 1000: [0.01]}))

    def test_summary_quantiles(self):
        (s,) = harness.summarize(synthetic({10: [1.0, 2.0, 3.0, 4.0, 5.0]}))
        assert (s.mean, s.median, s.q25, s.q75) == (3.0, 3.0, 2.0, 4.0)


measures = st.integers(1, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(-5, 5).map(float), min_size=n, max_size=n),
        st.lists(st.floats(0.01, 10), min_size=n, max_size=n),
    )
).map(lambda vw: EmpiricalMeasure(vw[0], np.array(vw[1]) / np.sum(vw[1])))


class TestKS:
    @settings(max_examples=200)
    @given(measures, measures, st.integers(1, 8))
    def test_matches_brute_force(self, a, b, chunk):
        want = brute_force_ks(a.values, a.weights, b.values, b.weights)
        assert harness.weighted_ks(a, b, chunk=chunk) == pytest.approx(want, abs=1e-12)
        assert harness.weighted_ks(b, a) == pytest.approx(want, abs=1e-12)

    @given(measures)
    def test_self_is_zero(self, a):
        assert harness.weighted_ks(a, a) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_supports(self):
        a, b = EmpiricalMeasure([0.0, 1.0], [0.5, 0.5]), EmpiricalMeasure([2.0, 3.0], [0.5, 0.5])
        assert harness.weighted_ks(a, b) == 1.0

    def test_critical_value(self):
        assert harness.ks_critical(100, 100) == pytest.approx(1.6276 * math.sqrt(0.02), rel=1e-4)

    def test_two_reference_runs_agree(self):
        q = models.bg_outer_query(2.0, 30)
        a = nested_is_measure(q, 20_000, None, RngStream.from_seed(1))
        b = nested_is_measure(q, 20_000, None, RngStream.from_seed(2))
        rep = harness.density_compare({"a": a, "b": b})
        (_, _, d, crit, above), = rep.ks_table()
        assert not above and d < crit


class TestDensity:
    def test_histograms_sum_to_one(self):
        rs = np.random.default_rng(0)
        ms = {k: EmpiricalMeasure(rs.normal(size=500), np.full(500, 1 / 500)) for k in "abc"}
        rep = harness.density_compare(ms, bins=20, value_range=(-1, 1))
        for h in rep.masses.values():
            assert abs(h.sum() - 1) < 1e-9
        assert len(rep.ks) == 3 and rep.edges.size == 21

    def test_empty_measure(self):
        ok = EmpiricalMeasure([1.0], [1.0])
        bad = EmpiricalMeasure.__new__(EmpiricalMeasure)
        bad.values, bad.weights, bad.group_sizes = np.array([]), np.array([]), None
        with pytest.raises(ValueError):
            harness.density_compare({"ok": ok, "bad": bad})

    def test_needs_two(self):
        with pytest.raises(ConfigError):
            harness.density_compare({"a": EmpiricalMeasure([1.0], [1.0])})


class TestPokerGrid:
    def test_fold_column(self):
        pay, err = harness.poker_grid([0.0, 0.5, 1.0], [0.0, 1.0], 10, 5, RngStream.from_seed(0))
        np.testing.assert_array_equal(pay, -1.0)
        np.testing.assert_array_equal(err, 0.0)

    def test_default_grid_shape(self):
        assert len(harness.POKER_HANDS) == 17 and len(harness.POKER_BETS) == 13

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            harness.poker_grid([], [6.0], 10, 5, RngStream.from_seed(0))

    def test_weak_hand_big_bet_decision_flips(self):
        # Against a reasoning opponent a bluff beats folding; against the naive one it does not.
        hands, bets = [0.0, 0.1, 0.2], [6.0, 8.0]
        nested, _ = harness.poker_grid(hands, bets, 10**4, 100, RngStream.from_seed(1))
        naive, _ = harness.poker_grid(hands, bets, 10**4, 1, RngStream.from_seed(1), variant="naive_n1_equals_1")
        fold = -1.0
        assert (naive < fold).all() and (nested > fold).all()

    def test_csv(self, tmp_path):
        p = tmp_path / "grid.csv"
        harness.write_grid_csv([0.5], [4.0, 6.0], np.array([[1.0, 2.0]]), np.array([[0.1, 0.2]]), p)
        lines = p.read_text().splitlines()
        assert lines[0] == "hand,bet,payoff,stderr" and len(lines) == 3
