from __future__ import annotations

import math

import numpy as np
import pytest

from robust_barriers.barycentre import BarrierPair
from robust_barriers.bounds import lower_bound, upper_bound
from robust_barriers.embedding import build_lower_extremal, build_upper_extremal, simulate
from robust_barriers.errors import DomainError
from robust_barriers.hedges import FIRST_LB, FIRST_UB, PathOutcome, evaluate_payoff
from robust_barriers.hedging_sim import (
    CostSpec,
    DeltaVegaConfig,
    HestonParams,
    HestonPaths,
    Ledger,
    compare_utilities,
    fair_value,
    heston_call_curve,
    heston_paths,
    path_outcome,
    run_delta_vega,
    run_quasi_static,
    type_map,
    utility_report,
)

BAR = BarrierPair(83.0, 117.0)


def _toy_paths(closes, levels=None):
    s = np.asarray(closes, dtype=float)
    n, m = s.shape
    p = HestonParams(steps_per_year=m - 1, substeps=2)
    return HestonPaths(p, np.linspace(0, 1, m), s, np.full_like(s, 0.5), s[:, 1:], s[:, 1:], 0, levels)


@pytest.fixture(scope="module")
def heston_setup():
    p = HestonParams()
    curve = heston_call_curve(p)
    paths = heston_paths(p, 2000, seed=21, levels=(83.0, 117.0))
    return p, curve, paths


class TestLedger:
    """Utility and mean adjustment."""

    def test_constant_ledger_has_zero_utility(self):
        led = Ledger("c", np.zeros(100), 0.0)
        assert led.utility() == 0.0
        assert Ledger("c", np.full(100, 3.0), 0.0).utility() == 0.0

    def test_mean_adjustment_invariant(self):
        rng = np.random.default_rng(0)
        e = rng.normal(0.1, 0.2, 1000)
        a, b = Ledger("a", e, 0.0), Ledger("b", e + 5.0, 0.0)
        assert a.adjusted.mean() == pytest.approx(0.0, abs=1e-12)
        assert a.utility() == pytest.approx(b.utility(), rel=1e-12)

    def test_utility_formula(self):
        e = np.array([-0.2, 0.0, 0.5])
        h = e - e.mean()
        assert Ledger("x", e, 0.0).utility() == pytest.approx(np.mean(1 - np.exp(-h)))

    def test_gaussian_utility(self):
        # for normal errors with sd s the mean-adjusted utility is 1 - exp(s^2 / 2)
        rng = np.random.default_rng(1)
        e = rng.normal(0.0, 0.1, 200_000)
        assert Ledger("g", e, 0.0).utility() == pytest.approx(1 - math.exp(0.005), abs=5e-4)

    def test_csv(self, tmp_path):
        led = Ledger("x", [1.0, 2.0], [0.1, 0.2])
        led.write_csv(tmp_path / "e.csv")
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0] == "path,error,adjusted_error,cost"
        assert len(lines) == 3

    def test_negative_costs_rejected(self):
        with pytest.raises(DomainError):
            CostSpec(-0.1, 0.0)


class TestPathOutcome:
    """Reduction of simulated paths to barrier events."""

    def test_daily_fills_at_breaching_close(self):
        paths = _toy_paths([[100, 90, 80, 105, 120, 110],
                            [100, 118, 100, 82, 95, 96],
                            [100, 101, 99, 100, 102, 101]])
        out = path_outcome(paths, BAR, "daily")
        assert list(out.hit_lb) == [True, True, False]
        assert list(out.hit_ub) == [True, True, False]
        assert list(out.first[:2]) == [FIRST_LB, FIRST_UB]
        assert out.fill_lb[:2] == pytest.approx([80.0, 82.0])
        assert out.fill_ub[:2] == pytest.approx([120.0, 118.0])

    def test_exact_needs_crossings(self):
        paths = _toy_paths([[100, 90, 110]])
        with pytest.raises(DomainError):
            path_outcome(paths, BAR, "exact")

    def test_exact_fills_at_barrier(self, heston_setup):
        _, _, paths = heston_setup
        out = path_outcome(paths, BAR, "exact")
        assert np.all(out.fill_lb == 83.0) and np.all(out.fill_ub == 117.0)
        daily = path_outcome(paths, BAR, "daily")
        # a daily close beyond a barrier implies a sub-grid crossing
        assert np.all(out.hit_lb[daily.hit_lb]) and np.all(out.hit_ub[daily.hit_ub])

    def test_fair_value(self, heston_setup):
        _, _, paths = heston_setup
        out = path_outcome(paths, BAR, "exact")
        mean, se = fair_value(paths, BAR, "exact")
        ind = (out.hit_lb & out.hit_ub).astype(float)
        assert mean == pytest.approx(ind.mean())
        assert se == pytest.approx(ind.std(ddof=1) / math.sqrt(ind.size))


class TestQuasiStatic:
    """Static hedges held on Heston paths."""

    def test_superhedge_floor(self, heston_setup):
        _, curve, paths = heston_setup
        bp = upper_bound(curve, BAR, check=False).blueprint
        led = run_quasi_static(bp, paths, curve, CostSpec(0, 0), monitoring="exact")
        floor = led.meta["premium"] - led.meta["hedge_cost"]
        assert np.all(led.errors >= floor - 1e-9)

    def test_cost_monotonicity(self, heston_setup):
        _, curve, paths = heston_setup
        bp = upper_bound(curve, BAR, check=False).blueprint
        base = run_quasi_static(bp, paths, curve, CostSpec())
        more = run_quasi_static(bp, paths, curve, CostSpec().scaled(2.0))
        assert np.all(more.errors <= base.errors)
        assert more.utility(adjusted=False) < base.utility(adjusted=False)
        assert more.mean < base.mean

    def test_long_position_flips_sign(self, heston_setup):
        _, curve, paths = heston_setup
        bp = lower_bound(curve, BAR, check=False).blueprint
        short = run_quasi_static(bp, paths, curve, CostSpec(0, 0), position="short", premium=0.5)
        long = run_quasi_static(bp, paths, curve, CostSpec(0, 0), position="long", premium=0.5)
        assert long.errors == pytest.approx(-short.errors)

    @pytest.mark.parametrize("side", ["upper", "lower"])
    def test_replication_on_extremal_model(self, uniform_curve, golden_barriers, side):
        build, bound = (build_upper_extremal, upper_bound) if side == "upper" else (build_lower_extremal, lower_bound)
        res = simulate(build(uniform_curve.law, golden_barriers), 20_000, seed=3)
        bp = bound(uniform_curve, golden_barriers).blueprint
        gap = evaluate_payoff(bp, res.outcome) - res.indicator
        assert np.max(np.abs(gap)) < 1e-9


class TestDeltaVega:
    """Dynamic benchmark."""

    def test_black_scholes_world(self):
        p = HestonParams(xi=0.0, v0=0.04, theta=0.04)
        paths = heston_paths(p, 10_000, seed=2)
        led = run_delta_vega(paths, BAR, CostSpec(0, 0), DeltaVegaConfig(vanilla_marks="bs"))
        assert led.errors.std() < 0.05
        assert abs(led.mean) < 0.01

    def test_error_shrinks_with_rebalancing(self):
        stds = []
        for spy in (365, 1460):
            p = HestonParams(xi=0.0, v0=0.09, theta=0.09, steps_per_year=spy, substeps=1)
            paths = heston_paths(p, 2000, seed=4)
            led = run_delta_vega(paths, BAR, CostSpec(0, 0), DeltaVegaConfig(vanilla_marks="bs"))
            stds.append(led.errors.std())
        # discrete hedging error scales like the square root of the step
        assert stds[1] / stds[0] == pytest.approx(0.5, abs=0.15)

    def test_costs_and_knock_out(self):
        p = HestonParams(steps_per_year=60)
        paths = heston_paths(p, 400, seed=5)
        cfg = DeltaVegaConfig(vanilla_marks="bs")
        free = run_delta_vega(paths, BAR, CostSpec(0, 0), cfg)
        costly = run_delta_vega(paths, BAR, CostSpec(), cfg)
        assert np.all(costly.costs >= 0)
        assert costly.errors + costly.costs == pytest.approx(free.errors)
        assert costly.mean < free.mean

    def test_positions_closed_after_double_touch(self):
        # path knocks both barriers on day 2 then wanders: later moves must not change the P&L
        base = [100.0, 80.0, 120.0]
        a = _toy_paths([base + [150.0, 60.0, 140.0]])
        b = _toy_paths([base + [110.0, 115.0, 90.0]])
        cfg = DeltaVegaConfig(vanilla_marks="bs", q_cap=0.0, sigma_atm=0.5)
        ea = run_delta_vega(a, BAR, CostSpec(0, 0), cfg, premium=0.5).errors
        eb = run_delta_vega(b, BAR, CostSpec(0, 0), cfg, premium=0.5).errors
        assert ea == pytest.approx(eb)

    def test_config_validation(self):
        with pytest.raises(DomainError):
            DeltaVegaConfig(vol="local")


class TestUtilityComparison:
    """Bootstrap utility tables."""

    def test_report_flags_best(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=2000)
        rows = utility_report([Ledger("wide", 0.3 * z, 0.0), Ledger("narrow", 0.1 * z, 0.0)], n_boot=200)
        assert [r.preferred for r in rows] == [False, True]
        for r in rows:
            assert r.ci_low <= r.utility <= r.ci_high

    def test_paired_comparison(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=2000)
        res = compare_utilities(Ledger("a", 0.1 * z, 0.0), Ledger("b", 0.3 * z, 0.0), n_boot=300)
        assert res["a_preferred"] and not res["b_preferred"]
        same = compare_utilities(Ledger("a", 0.1 * z, 0.0), Ledger("b", 0.1 * z, 0.0), n_boot=100)
        assert same["difference"] == 0.0
        assert not same["a_preferred"] and not same["b_preferred"]

    def test_unpaired_rejected(self):
        with pytest.raises(DomainError):
            compare_utilities(Ledger("a", np.zeros(3), 0.0), Ledger("b", np.zeros(4), 0.0))


class TestTypeMap:
    """Case labels over barrier grids."""

    def test_mirror_symmetry(self, uniform_curve):
        lbs = np.array([20.0, 50.0, 80.0])
        ubs = 200.0 - lbs[::-1]
        tm = type_map(uniform_curve, lbs, ubs)
        swap_up = {"I": "II", "II": "I", "III": "III", "IV": "IV"}
        swap_lo = {"I": "I", "II": "III", "III": "II", "IV": "IV"}
        n = lbs.size
        for i in range(n):
            for j in range(n):
                # (lb, ub) -> (200 - ub, 200 - lb)
                assert tm.upper[n - 1 - j, n - 1 - i] == swap_up[tm.upper[i, j]]
                assert tm.lower[n - 1 - j, n - 1 - i] == swap_lo[tm.lower[i, j]]

    def test_csv_and_labels(self, uniform_curve, tmp_path):
        tm = type_map(uniform_curve, [20.0, 90.0], [110.0, 180.0])
        tm.write_csv(tmp_path / "tm.csv")
        rows = (tmp_path / "tm.csv").read_text().splitlines()
        assert rows[0] == "lb,ub,upper_case,lower_case"
        assert len(rows) == 5
        assert tm.labels("upper") <= {"I", "II", "III", "IV"}
