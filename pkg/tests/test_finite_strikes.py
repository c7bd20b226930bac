from __future__ import annotations

import numpy as np
import pytest

from robust_barriers.barycentre import BarrierPair
from robust_barriers.bounds import compute_bounds
from robust_barriers.errors import ArbitrageViolation, InsufficientQuotes
from robust_barriers.finite_strikes import (
    QuoteSet,
    discretize_hedge,
    finite_bounds,
    lower_kinked,
    price_envelope,
    quoted_cost,
    upper_surface,
)
from robust_barriers.hedges import make_superhedge, static_cost
from robust_barriers.market_input import check_no_arbitrage, digital_price


def _uniform_quotes(uniform_curve, strikes):
    return QuoteSet.sample(uniform_curve, strikes)


class TestQuoteSet:
    """Validation of traded quotes."""

    def test_zero_strike_added(self, uniform_curve):
        qs = _uniform_quotes(uniform_curve, [50, 100, 150])
        assert qs.strikes[0] == 0.0
        assert qs.prices[0] == 100.0

    def test_arbitrage_rejected(self):
        with pytest.raises(ArbitrageViolation):
            QuoteSet([90, 100, 110], [8, 14, 5], 100.0)

    def test_tail_point(self, uniform_curve):
        qs = _uniform_quotes(uniform_curve, [50, 100, 150])
        # chord slope (6.25 - 25) / 50 extended from 150 reaches zero at 166.67
        assert qs.tail_point() == pytest.approx(150 + 6.25 / (18.75 / 50))


class TestEnvelope:
    """No-arbitrage range of unquoted call prices."""

    def test_chord_upper(self, uniform_curve):
        qs = _uniform_quotes(uniform_curve, [50, 100, 150, 200])
        lo, hi = price_envelope(qs, [75.0])
        assert float(hi[0]) == pytest.approx((150**2 / 400 + 100**2 / 400) / 2)
        assert float(lo[0]) <= float(uniform_curve.value(75.0)) <= float(hi[0])

    def test_collapses_at_quotes(self, uniform_curve):
        qs = _uniform_quotes(uniform_curve, [50, 100, 150, 200])
        lo, hi = price_envelope(qs, qs.strikes)
        assert lo == pytest.approx(qs.prices)
        assert hi == pytest.approx(qs.prices)

    def test_linear_segment(self):
        # two atoms at 20 and 180: C is linear on [20, 180]
        k = np.array([20.0, 60.0, 100.0, 140.0, 180.0])
        qs = QuoteSet(k, 0.5 * (180.0 - k), 100.0)
        grid = np.linspace(60.0, 140.0, 17)
        lo, hi = price_envelope(qs, grid)
        assert lo == pytest.approx(hi, abs=1e-12)

    def test_sandwich_on_random_completions(self, uniform_curve, completion_sampler):
        qs = _uniform_quotes(uniform_curve, np.linspace(20, 200, 10))
        grid = np.linspace(0.0, 200.0, 401)
        lo, hi = price_envelope(qs, grid)
        rng = np.random.default_rng(8)
        for f in completion_sampler(qs.strikes, qs.prices, qs.spot, 200, rng):
            v = f(grid)
            assert np.all(v >= lo - 1e-10)
            assert np.all(v <= hi + 1e-10)

    def test_outside_quoted_range(self, uniform_curve):
        qs = _uniform_quotes(uniform_curve, [50, 100])
        with pytest.raises(Exception):
            price_envelope(qs, [150.0])


class TestSurfaces:
    """Extremal call surfaces consistent with the quotes."""

    def test_upper_surface_atoms(self, uniform_curve):
        qs = _uniform_quotes(uniform_curve, [50, 100, 150, 200])
        pts, ms = upper_surface(qs).law.atoms
        slopes = np.concatenate([[-1.0], np.diff(qs.prices) / np.diff(qs.strikes), [0.0]])
        expected = np.diff(slopes)
        assert ms == pytest.approx(expected[expected > 0])
        assert pts == pytest.approx(qs.strikes[expected > 0])

    def test_kinks_at_envelope_floor(self, uniform_curve, golden_barriers):
        qs = _uniform_quotes(uniform_curve, np.arange(10, 201, 10))
        curve = lower_kinked(qs, golden_barriers)
        levels = [83.0, 117.0]
        assert curve.value(levels) == pytest.approx(price_envelope(qs, levels)[0], abs=1e-10)
        assert curve.value(qs.strikes) == pytest.approx(qs.prices, abs=1e-10)
        assert float(digital_price(curve, 83.0, "geq")) > float(digital_price(curve, 83.0, "gt"))
        assert float(digital_price(curve, 117.0, "geq")) > float(digital_price(curve, 117.0, "gt"))

    def test_shared_quote_stays_admissible(self, uniform_curve, golden_barriers):
        # 83 and 117 fall on either side of the single quote at 100
        qs = _uniform_quotes(uniform_curve, [50, 100, 150, 200])
        curve = lower_kinked(qs, golden_barriers)
        grid = np.linspace(0.0, 200.0, 2001)
        lo, hi = price_envelope(qs, grid)
        v = curve.value(grid)
        assert np.all(v >= lo - 1e-10) and np.all(v <= hi + 1e-10)
        assert check_no_arbitrage(grid, v, 100.0) == []
        assert curve.value(qs.strikes) == pytest.approx(qs.prices, abs=1e-10)

    def test_surfaces_converge(self, uniform_curve):
        grid = np.linspace(0.0, 200.0, 2001)
        errs = []
        for n in (10, 100, 1000):
            qs = _uniform_quotes(uniform_curve, np.linspace(0, 200, n + 1)[1:])
            errs.append(float(np.max(np.abs(upper_surface(qs).value(grid) - uniform_curve.value(grid)))))
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-3


class TestDiscretize:
    """Superhedges restricted to traded strikes."""

    def test_chord_split(self, uniform_curve, golden_barriers):
        qs = _uniform_quotes(uniform_curve, np.arange(10, 201, 10))
        bp = make_superhedge("IV", golden_barriers, (166.0, 34.0), spot=100.0)
        new = discretize_hedge(bp, qs)
        calls = {leg.param for leg in new.static.legs if leg.kind == "call"}
        assert {160.0, 170.0} <= calls or {30.0, 40.0} <= calls
        assert quoted_cost(new, qs) == pytest.approx(static_cost(bp, upper_surface(qs)), abs=1e-10)

    def test_traded_strikes_unchanged(self, uniform_curve, golden_barriers):
        qs = _uniform_quotes(uniform_curve, np.arange(2, 201, 2))
        bp = make_superhedge("IV", golden_barriers, (166.0, 34.0), spot=100.0)
        new = discretize_hedge(bp, qs)
        s = np.linspace(0, 200, 4001)
        assert new.static.payoff(s) == pytest.approx(bp.static.payoff(s), abs=1e-10)

    def test_out_of_range(self, uniform_curve, golden_barriers):
        qs = _uniform_quotes(uniform_curve, [50, 100, 150])
        bp = make_superhedge("IV", golden_barriers, (166.0, 34.0), spot=100.0)
        with pytest.raises(InsufficientQuotes):
            discretize_hedge(bp, qs)


@pytest.fixture(scope="module")
def continuum(uniform_curve, golden_barriers):
    return compute_bounds(uniform_curve, golden_barriers)


class TestFiniteBounds:
    """Bounds from finitely many quotes on the uniform law."""

    def test_dense_quotes_converge(self, uniform_curve, golden_barriers, continuum):
        qs = _uniform_quotes(uniform_curve, np.linspace(0, 200, 1001)[1:])
        fb = finite_bounds(qs, golden_barriers, completion=uniform_curve)
        assert fb["upper"].value == pytest.approx(0.66, rel=0.01)
        assert fb["lower"].value == pytest.approx(0.2944, rel=0.015)
        assert fb["upper"].value >= continuum["upper"].value - 1e-9
        assert fb["lower"].value <= continuum["lower"].value + 1e-9

    def test_few_quotes_widen(self, uniform_curve, golden_barriers, continuum):
        qs = _uniform_quotes(uniform_curve, [40, 80, 120, 160, 200])
        fb = finite_bounds(qs, golden_barriers)
        assert fb["upper"].value > continuum["upper"].value
        assert fb["lower"].value < continuum["lower"].value

    def test_barriers_need_flanking_quotes(self, uniform_curve, golden_barriers):
        qs = _uniform_quotes(uniform_curve, [90, 110])
        with pytest.raises(InsufficientQuotes):
            finite_bounds(qs, golden_barriers)
