from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from robust_barriers.errors import ArbitrageViolation, DomainError
from robust_barriers.market_input import (
    CallCurve,
    DiscreteLaw,
    Leg,
    LognormalLaw,
    StaticPortfolio,
    TabulatedLaw,
    build_call_curve,
    check_no_arbitrage,
    digital_price,
    fit_call_curve,
    load_quotes,
    price_static,
    put_price,
)


class TestUniformCurve:
    """Call, put and digital prices on the uniform law on [0, 200]."""

    def test_call_matches_closed_form(self, uniform_curve):
        k = np.linspace(0.0, 200.0, 41)
        assert uniform_curve.value(k) == pytest.approx((200.0 - k) ** 2 / 400.0, abs=1e-12)

    def test_call_matches_quadrature(self, uniform_curve):
        for k in (12.5, 83.0, 117.0, 166.0):
            oracle, _ = integrate.quad(lambda u: (u - k) / 200.0, k, 200.0)
            assert float(uniform_curve.value(k)) == pytest.approx(oracle, rel=1e-12)

    def test_zero_strike_call_is_spot(self, uniform_curve):
        assert float(uniform_curve.value(0.0)) == pytest.approx(100.0)

    def test_put_from_parity(self, uniform_curve):
        assert float(put_price(uniform_curve, 34.0)) == pytest.approx(2.89, abs=1e-12)
        assert float(put_price(uniform_curve, 0.0)) == pytest.approx(0.0, abs=1e-12)
        assert float(put_price(uniform_curve, 100.0)) == pytest.approx(float(uniform_curve.value(100.0)))

    def test_digital_prices(self, uniform_curve):
        assert float(digital_price(uniform_curve, 117.0)) == pytest.approx(0.415)
        assert float(digital_price(uniform_curve, 0.0)) == pytest.approx(1.0)
        assert float(digital_price(uniform_curve, 200.0)) == pytest.approx(0.0, abs=1e-12)

    def test_law_quantities(self, uniform_law):
        assert float(uniform_law.density(50.0)) == pytest.approx(1 / 200)
        assert float(uniform_law.cdf(100.0)) == pytest.approx(0.5)
        assert float(uniform_law.partial_moment(0.0, 166.0)) == pytest.approx(166.0**2 / 400.0)

    def test_out_of_domain_strike(self, uniform_curve):
        with pytest.raises(DomainError):
            uniform_curve.value(250.0)


class TestStaticPricing:
    """Portfolio prices against hand arithmetic and numerical integration."""

    def test_cash_leg(self, uniform_curve):
        assert price_static(uniform_curve, [Leg("cash", None, 5.0)]) == pytest.approx(5.0)

    def test_golden_superhedge_portfolio(self, uniform_curve):
        legs = [Leg("call", 166.0, 1 / 83), Leg("put", 34.0, 1 / 83), Leg("cash", None, 4067 / 6889),
                Leg("forward", 100.0, 0.3)]
        assert price_static(uniform_curve, legs) == pytest.approx(0.66, abs=1e-6)
        port = StaticPortfolio.of(legs)
        oracle, _ = integrate.quad(lambda u: float(port.payoff(u)) / 200.0, 0.0, 200.0, points=[34.0, 166.0])
        assert oracle == pytest.approx(0.66, abs=1e-9)

    def test_digital_leg(self, uniform_curve):
        assert price_static(uniform_curve, [Leg("digital_geq", 117.0, 1.0)]) == pytest.approx(0.415)

    def test_unknown_leg_kind(self):
        with pytest.raises(DomainError):
            Leg("swap", 1.0, 1.0)


class TestLognormalLaw:
    """Truncated lognormal law compared with the Black formula."""

    def test_calls_match_black(self):
        law = LognormalLaw(100.0, 0.2)
        curve = CallCurve(law, "analytic-lognormal", 100.0)
        for k in (60.0, 100.0, 140.0):
            d1 = (math.log(100.0 / k) + 0.02) / 0.2
            black = 100.0 * stats.norm.cdf(d1) - k * stats.norm.cdf(d1 - 0.2)
            assert float(curve.value(k)) == pytest.approx(black, abs=1e-6)

    def test_mass_and_mean(self):
        law = LognormalLaw(100.0, 0.5)
        assert law.total_mass() == pytest.approx(1.0)
        assert law.mean() == pytest.approx(100.0)
        assert float(law.partial_moment(0.0, law.hi)) == pytest.approx(100.0)


class TestOtherLaws:
    """Tabulated and discrete laws."""

    def test_tabulated_uniform_is_exact(self):
        law = TabulatedLaw(np.linspace(0, 200, 11), np.full(11, 1 / 200), 100.0)
        assert float(law.call(50.0)) == pytest.approx(150.0**2 / 400.0, rel=1e-12)

    def test_tabulated_triangle_against_quadrature(self):
        nodes = np.array([0.0, 100.0, 200.0])
        law = TabulatedLaw(nodes, np.array([0.0, 0.01, 0.0]), 100.0)
        f = lambda u: np.interp(u, nodes, [0.0, 0.01, 0.0])
        oracle, _ = integrate.quad(lambda u: (u - 130.0) * f(u), 130.0, 200.0)
        assert float(law.call(130.0)) == pytest.approx(oracle, rel=1e-10)

    def test_discrete_conventions(self):
        law = DiscreteLaw([80.0, 120.0], [0.5, 0.5])
        curve = CallCurve(law, "grid-interpolated", 100.0)
        assert float(digital_price(curve, 120.0, "geq")) == pytest.approx(0.5)
        assert float(digital_price(curve, 120.0, "gt")) == pytest.approx(0.0)
        assert float(curve.value(100.0)) == pytest.approx(10.0)


class TestNoArbitrage:
    """Diagnostics of quote tables."""

    def test_clean_quotes(self):
        assert check_no_arbitrage([90, 100, 110], [14, 8, 5], 100.0) == []

    def test_monotonicity_violation(self):
        kinds = {v.kind for v in check_no_arbitrage([90, 100, 110], [8, 14, 5], 100.0)}
        assert "monotonicity" in kinds

    def test_above_spot(self):
        kinds = {v.kind for v in check_no_arbitrage([10.0], [120.0], 100.0)}
        assert "above_spot" in kinds

    def test_concave_triple_index(self):
        bad = [v for v in check_no_arbitrage([90, 100, 110], [14, 11, 5], 100.0) if v.kind == "convexity"]
        assert len(bad) == 1
        assert bad[0].index == 1
        assert bad[0].strike == 100.0

    def test_fit_rejects_arbitrage(self):
        with pytest.raises(ArbitrageViolation):
            fit_call_curve([90, 100, 110], [8, 14, 5], 100.0)


class TestFitAndBuild:
    """Curve fitting from quotes and config dispatch."""

    def test_fit_reproduces_uniform_quotes(self, tmp_path):
        k = np.linspace(10, 190, 19)
        path = tmp_path / "q.csv"
        path.write_text("strike,price\n" + "\n".join(f"{a},{(200 - a) ** 2 / 400}" for a in k))
        table = load_quotes(path, 100.0)
        curve = build_call_curve(table)
        assert curve.meta["max_quote_residual"] < 0.05
        assert curve.law.mean() == pytest.approx(100.0, rel=1e-9)
        assert np.all(np.diff(curve.value(np.linspace(0, 150, 50)), 2) >= -1e-9)

    def test_uniform_config(self):
        curve = build_call_curve({"family": "uniform", "params": {"a": 0, "b": 200}})
        assert curve.spot == pytest.approx(100.0)

    def test_uniform_config_spot_mismatch(self):
        with pytest.raises(DomainError):
            build_call_curve({"family": "uniform", "params": {"a": 0, "b": 200}, "S0": 90})

    def test_unknown_family(self):
        with pytest.raises(DomainError):
            build_call_curve({"family": "sabr"})
