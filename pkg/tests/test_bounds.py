from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from robust_barriers.barycentre import BarrierPair, rho_minus, rho_plus
from robust_barriers.bounds import classify_lower, classify_upper, compute_bounds, lower_bound, upper_bound
from robust_barriers.hedges import make_superhedge, static_cost
from robust_barriers.market_input import CallCurve, LognormalLaw, TabulatedLaw


def _f(x) -> float:
    return float(np.asarray(x).reshape(-1)[0])


def _uniform_price(blueprint) -> float:
    """Static price by integrating the payoff against the density 1/200."""
    kinks = sorted({float(leg.param) for leg in blueprint.static.legs if leg.param is not None})
    val, _ = integrate.quad(lambda u: float(blueprint.static.payoff(u)) / 200.0, 0.0, 200.0, points=kinks or None,
                            limit=200, epsabs=1e-12)
    return val


class TestUpperClassification:
    """Upper case labels on the uniform law."""

    def test_golden_case_iv(self, uniform_law, golden_barriers):
        cl = classify_upper(uniform_law, golden_barriers)
        assert cl.case == "IV"
        assert cl.n_true == 1
        lhs = _f(rho_plus(uniform_law, 117.0, rho_minus(uniform_law, 83.0, 0.0)))
        rhs = _f(rho_minus(uniform_law, 83.0, rho_plus(uniform_law, 117.0, math.inf)))
        assert lhs == pytest.approx(68.0)
        assert rhs == pytest.approx(132.0)

    def test_case_i(self, uniform_law):
        cl = classify_upper(uniform_law, BarrierPair(10.0, 110.0))
        assert cl.case == "I"
        assert cl.params["K"] == pytest.approx(20.0)
        assert cl.params["z0"] == pytest.approx(110.0 + math.sqrt(4100.0), rel=1e-9)

    def test_case_iii(self, uniform_law):
        cl = classify_upper(uniform_law, BarrierPair(40.0, 160.0))
        assert cl.case == "III"
        w0 = 280.0 - math.sqrt(59200.0)
        got = (cl.params["K1"], cl.params["K2"], cl.params["K3"], cl.params["K4"])
        assert got == pytest.approx((200 - w0, 120 + w0, 80 - w0, w0), abs=1e-6)

    def test_mirror_case_ii(self, uniform_law):
        # reflecting 10/110 about the spot swaps the roles of the barriers
        assert classify_upper(uniform_law, BarrierPair(90.0, 190.0)).case == "II"


class TestUpperBound:
    """Upper bound values."""

    def test_golden_value(self, uniform_curve, golden_barriers):
        b = upper_bound(uniform_curve, golden_barriers)
        assert b.value == pytest.approx(0.66, abs=1e-6)
        assert _uniform_price(b.blueprint) == pytest.approx(0.66, abs=1e-9)

    def test_case_i_put_form(self, uniform_curve):
        b = upper_bound(uniform_curve, BarrierPair(10.0, 110.0))
        # P(20) / (20 - 10) equals F(20) = 0.1 on the uniform law
        assert b.value == pytest.approx(0.1, abs=1e-6)

    def test_bounded_by_one(self, uniform_curve):
        assert upper_bound(uniform_curve, BarrierPair(0.5, 101.0)).value <= 1.0 + 1e-12

    def test_random_superhedges_cost_more(self):
        law = LognormalLaw(100.0, 0.3)
        curve = CallCurve(law, "analytic-lognormal", 100.0)
        bar = BarrierPair(85.0, 120.0)
        best = upper_bound(curve, bar).value
        rng = np.random.default_rng(5)
        for _ in range(200):
            bp = make_superhedge("IV", bar, (rng.uniform(120, 400), rng.uniform(0, 85)), spot=100.0)
            assert static_cost(bp, curve) >= best - 1e-9


class TestLowerBound:
    """Lower bound classification and values."""

    def test_golden_case_i(self, uniform_curve, uniform_law, golden_barriers):
        cl = classify_lower(uniform_law, golden_barriers)
        assert cl.case == "I"
        assert cl.params["v0"] == pytest.approx(100.0, abs=1e-6)
        b = lower_bound(uniform_curve, golden_barriers)
        assert b.value == pytest.approx(0.2944, abs=5e-4)
        assert _uniform_price(b.blueprint) == pytest.approx(b.value, abs=1e-8)
        strikes = (b.params["K1"], b.params["K2"], b.params["K3"])
        assert strikes == pytest.approx((170.5614, 29.4386, 100.0), abs=1e-4)

    def test_concentrated_law_gives_zero(self):
        law = TabulatedLaw([0, 90, 100, 110, 200], [0, 0, 0.1, 0, 0], 100.0)
        curve = CallCurve(law, "grid-interpolated", 100.0)
        b = lower_bound(curve, BarrierPair(83.0, 117.0))
        assert b.case == "IV"
        assert b.value == 0.0
        assert b.blueprint.static.legs == ()

    def test_sign_of_kappa_gap_selects_ii_or_iii(self, uniform_law):
        for bar in (BarrierPair(20.0, 110.0), BarrierPair(90.0, 180.0), BarrierPair(60.0, 125.0)):
            cl = classify_lower(uniform_law, bar)
            assert cl.n_true == 1


class TestSandwich:
    """The lower bound never exceeds the upper bound."""

    @pytest.mark.parametrize("lb,ub", [(70.0, 130.0), (90.0, 105.0), (50.0, 115.0), (95.0, 160.0)])
    def test_lognormal(self, lb, ub):
        curve = CallCurve(LognormalLaw(100.0, 0.35), "analytic-lognormal", 100.0)
        b = compute_bounds(curve, BarrierPair(lb, ub))
        assert 0.0 <= b["lower"].value <= b["upper"].value <= 1.0

    def test_to_dict_is_serialisable(self, uniform_curve, golden_barriers):
        import json

        b = compute_bounds(uniform_curve, golden_barriers)
        doc = json.dumps({k: v.to_dict() for k, v in b.items()})
        assert "IV" in doc
