from __future__ import annotations

import numpy as np
import pytest

from robust_barriers.barycentre import BarrierPair
from robust_barriers.errors import InequalityViolated, StrikeOrdering, ThresholdSide
from robust_barriers.hedges import (
    PathOutcome,
    check_pathwise,
    double_touch_indicator,
    evaluate_payoff,
    lh_coefficients,
    lh_threshold,
    make_subhedge,
    make_superhedge,
    random_outcomes,
    static_cost,
    uh3_coefficients,
    uh4_coefficients,
    zero_hedge,
)

BAR = BarrierPair(83.0, 117.0)


def _uh3_by_linear_solve(lb, ub, k1, k2, k3, k4):
    """Solve the six piecewise-linear matching conditions of uh^III as a dense system."""
    # unknowns: a1, a2, a3, a4, b1, b2
    m = np.array([
        [1, 1, 0, 0, -1, 0],
        [0, k1 - k2, 0, 0, -(k1 - ub), 0],
        [0, 0, k3 - lb, 0, -(lb - ub), 0],
        [0, 0, 1, 1, 0, -1],
        [0, 0, k3 - k4, 0, 0, k4 - lb],
        [0, ub - k2, 0, 0, 0, ub - lb],
    ], dtype=float)
    rhs = np.array([0, 0, 1, 0, 0, 1], dtype=float)
    return np.linalg.solve(m, rhs)


class TestSuperhedgeCoefficients:
    """Closed-form superhedge coefficients."""

    def test_uh4_golden(self):
        c = uh4_coefficients(83.0, 117.0, 100.0, 166.0, 34.0)
        assert float(c["alpha1"]) == pytest.approx(1 / 83)
        assert float(c["alpha2"]) == pytest.approx(1 / 83)
        assert float(c["alpha3"]) == pytest.approx(0.0, abs=1e-15)
        assert float(c["alpha4"]) == pytest.approx(4067 / 6889)
        for k in ("beta1", "beta2", "beta3", "beta4"):
            assert float(c[k]) == pytest.approx(1 / 83)

    def test_uh1_near_barrier(self):
        eps = 1e-3
        bp = make_superhedge("I", BAR, 83.0 + eps)
        assert bp.coefficients["alpha"] == pytest.approx(1 / eps)
        assert bp.coefficients["beta"] == pytest.approx(1 / eps)

    def test_uh3_matches_linear_solve(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            k4 = rng.uniform(0, 83)
            k3 = rng.uniform(83, 117)
            k2 = rng.uniform(k3, 117)
            k1 = rng.uniform(117, 300)
            c = uh3_coefficients(83.0, 117.0, k1, k2, k3, k4)
            sol = _uh3_by_linear_solve(83.0, 117.0, k1, k2, k3, k4)
            got = [float(c[k]) for k in ("alpha1", "alpha2", "alpha3", "alpha4", "beta1", "beta2")]
            assert got == pytest.approx(sol, rel=1e-9, abs=1e-12)

    def test_strike_ordering(self):
        with pytest.raises(StrikeOrdering):
            make_superhedge("IV", BAR, (150.0, 90.0), spot=100.0)
        with pytest.raises(StrikeOrdering):
            make_superhedge("I", BAR, 80.0)


class TestSubhedgeCoefficients:
    """Closed-form subhedge coefficients."""

    def test_lh1_golden(self):
        c = lh_coefficients("I", 83.0, 117.0, 100.0, 170.5614, 29.4386)
        assert float(c["K3"]) == pytest.approx(100.0, abs=1e-3)
        assert float(c["alpha0"]) == pytest.approx(0.61170, abs=1e-5)
        assert float(c["alpha1"]) == pytest.approx(0.0, abs=1e-9)
        assert float(c["alpha2"]) == pytest.approx(0.011421, abs=1e-6)
        assert float(c["alpha3"]) == pytest.approx(0.022841, abs=1e-6)
        assert float(c["gamma1"]) == pytest.approx(0.38830, abs=1e-5)
        assert float(c["gamma2"]) == pytest.approx(0.38830, abs=1e-5)

    def test_alpha1_vanishes_on_symmetric_sum(self):
        c = lh_coefficients("I", 83.0, 117.0, 100.0, 150.0, 50.0)
        assert float(c["alpha1"]) == 0.0

    def test_threshold_is_line_intersection(self):
        k1, k2 = 160.0, 40.0
        t = float(lh_threshold(83.0, 117.0, k1, k2))
        # on the line (lb,0)-(K1,1) and on the line (K2,1)-(ub,0)
        assert (t - 83.0) / (k1 - 83.0) == pytest.approx((117.0 - t) / (117.0 - k2))

    def test_threshold_side(self):
        thr = float(lh_threshold(83.0, 117.0, 160.0, 40.0))
        with pytest.raises(ThresholdSide):
            make_subhedge("II", BAR, 100.0, (160.0, 40.0, thr + 1.0))
        with pytest.raises(ThresholdSide):
            make_subhedge("III", BAR, 100.0, (160.0, 40.0, thr - 1.0))

    def test_zero_hedge(self, uniform_curve):
        bp = zero_hedge(BAR)
        assert bp.static.legs == ()
        assert static_cost(bp, uniform_curve) == 0.0


class TestPayoffs:
    """Hedge payoffs on hand-built outcomes."""

    def test_uh4_flat_region(self):
        bp = make_superhedge("IV", BAR, (166.0, 34.0), spot=100.0)
        out = PathOutcome(100.0, True, True, "lb")
        # cash 4067/6889 plus two forwards each worth 17/83
        assert float(evaluate_payoff(bp, out)) == pytest.approx(4067 / 6889 + 34 / 83)
        assert float(evaluate_payoff(bp, out)) == pytest.approx(1.0)

    def test_lh1_payoff_at_k2(self):
        bp = make_subhedge("I", BAR, 100.0, (170.5614070238709, 29.4385929761368))
        for first in ("lb", "ub"):
            out = PathOutcome(29.4385929761368, True, True, first)
            assert float(evaluate_payoff(bp, out)) == pytest.approx(1.0, abs=1e-9)

    def test_superhedges_nonnegative_without_touch(self):
        s = np.linspace(83.01, 116.99, 50)
        out = PathOutcome(s, np.zeros(50, bool), np.zeros(50, bool), "neither")
        for bp in (make_superhedge("IV", BAR, (166.0, 34.0), spot=100.0), make_superhedge("I", BAR, 120.0),
                   make_superhedge("II", BAR, 60.0), make_superhedge("III", BAR, (180.0, 110.0, 95.0, 40.0))):
            assert np.all(evaluate_payoff(bp, out) >= 0)

    def test_indicator(self):
        out = PathOutcome([1.0, 2.0, 3.0], [True, True, False], [True, False, False], ["lb", "lb", "neither"])
        assert list(double_touch_indicator(out)) == [1.0, 0.0, 0.0]

    def test_inconsistent_first_label(self):
        with pytest.raises(ValueError):
            PathOutcome(100.0, False, True, "lb")


class TestPathwise:
    """Randomised pathwise dominance."""

    def test_uh3_random_outcomes(self):
        rng = np.random.default_rng(11)
        bp = make_superhedge("III", BAR, (180.0, 110.0, 95.0, 40.0))
        out = random_outcomes(rng, 83.0, 117.0, 10_000, 400.0)
        assert np.all(check_pathwise(bp, out) >= -1e-9)

    def test_superhedge_survives_jumps(self):
        rng = np.random.default_rng(12)
        out = random_outcomes(rng, 83.0, 117.0, 2000, 400.0, jumps=True)
        bp = make_superhedge("IV", BAR, (166.0, 34.0), spot=100.0)
        check_pathwise(bp, out)

    def test_subhedge_on_jumps_is_flagged(self):
        rng = np.random.default_rng(13)
        out = random_outcomes(rng, 83.0, 117.0, 2000, 400.0, jumps=True)
        bp = make_subhedge("I", BAR, 100.0, (170.5614, 29.4386))
        slack = check_pathwise(bp, out, raise_on_violation=False)
        assert slack.shape == (2000,)
        if np.any(slack < -1e-9):
            with pytest.raises(InequalityViolated):
                check_pathwise(bp, out)

    def test_violation_carries_witness(self):
        bp = make_superhedge("I", BAR, 120.0)
        fake = PathOutcome(100.0, True, True, "lb", fill_lb=83.0)
        # drop the trigger to force a violation at S_T = 100 after a double touch
        broken = type(bp)(bp.side, bp.variant, bp.barriers, bp.strikes, bp.static, (), bp.coefficients)
        with pytest.raises(InequalityViolated) as info:
            check_pathwise(broken, fake)
        assert info.value.witness["terminal"] == 100.0
