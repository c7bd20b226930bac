"""Quasi-static super- and subhedges of the double touch digital.

A hedge is a static portfolio (calls, puts, digitals, a time-zero forward and
cash) plus forward trades opened when the price path reaches a barrier.
Coefficient formulas are vectorised so the bounds module can price whole
strike grids at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .barycentre import BarrierPair
from .errors import InequalityViolated, SingularSystem, StrikeOrdering, ThresholdSide
from .market_input import CallCurve, Leg, StaticPortfolio, price_static

FIRST_NONE, FIRST_LB, FIRST_UB = 0, 1, 2
_FIRST_CODES = {"neither": FIRST_NONE, "lb": FIRST_LB, "ub": FIRST_UB, None: FIRST_NONE}

# Trigger events.  The first four are the hitting-order events; hit_lb/hit_ub
# fire whenever the barrier is reached (used by the one-sided hedges).
EVENTS = ("ub_first", "lb_first", "ub_then_lb", "lb_then_ub", "hit_lb", "hit_ub")


@dataclass
class PathOutcome:
    """What a hedge needs to know about a path.

    Fields may be scalars or equal-length arrays.  ``first`` is one of
    ``"lb"``, ``"ub"``, ``"neither"`` or the integer codes above.  ``fill_lb``
    and ``fill_ub`` are the prices at which barrier-triggered forwards were
    actually opened (the barrier itself for continuous monitoring; beyond it
    after a jump or a late daily observation).
    """

    terminal: np.ndarray | float
    hit_lb: np.ndarray | bool
    hit_ub: np.ndarray | bool
    first: np.ndarray | str | int = "neither"
    fill_lb: np.ndarray | float | None = None
    fill_ub: np.ndarray | float | None = None
    times: dict | None = None

    def __post_init__(self):
        self.terminal = np.asarray(self.terminal, dtype=float)
        self.hit_lb = np.asarray(self.hit_lb, dtype=bool)
        self.hit_ub = np.asarray(self.hit_ub, dtype=bool)
        first = self.first
        if isinstance(first, str) or first is None:
            first = _FIRST_CODES[first]
        elif np.asarray(first).dtype.kind in "UO":
            first = [_FIRST_CODES[f] for f in np.asarray(first).ravel()]
        self.first = np.asarray(first, dtype=int)
        if np.any((self.first == FIRST_LB) & ~self.hit_lb) or np.any((self.first == FIRST_UB) & ~self.hit_ub):
            raise ValueError("first-hit label inconsistent with hit flags")
        if np.any(self.hit_lb & self.hit_ub & (self.first == FIRST_NONE)):
            raise ValueError("both barriers hit but no first-hit label")

    def event(self, name: str) -> np.ndarray:
        if name == "ub_first":
            return self.first == FIRST_UB
        if name == "lb_first":
            return self.first == FIRST_LB
        if name == "ub_then_lb":
            return (self.first == FIRST_UB) & self.hit_lb
        if name == "lb_then_ub":
            return (self.first == FIRST_LB) & self.hit_ub
        if name == "hit_lb":
            return self.hit_lb
        if name == "hit_ub":
            return self.hit_ub
        raise ValueError(f"unknown event {name!r}")


def double_touch_indicator(outcome: PathOutcome) -> np.ndarray:
    return (outcome.hit_lb & outcome.hit_ub).astype(float)


@dataclass(frozen=True)
class Trigger:
    """Forward opened at the barrier ``strike`` when ``event`` occurs; pays qty*(S_T - fill)."""

    event: str
    strike: float
    qty: float

    def to_dict(self) -> dict:
        return {"event": self.event, "strike": self.strike, "qty": self.qty}


@dataclass(frozen=True)
class HedgeBlueprint:
    side: str  # "super", "sub" or "zero"
    variant: str
    barriers: BarrierPair
    strikes: dict
    static: StaticPortfolio
    triggers: tuple[Trigger, ...] = ()
    coefficients: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "variant": self.variant,
            "strikes": {k: _jsonable(v) for k, v in self.strikes.items()},
            "legs": [leg.to_dict() for leg in self.static.legs],
            "triggers": [t.to_dict() for t in self.triggers],
        }

    def trigger_payoff(self, outcome: PathOutcome) -> np.ndarray:
        s = outcome.terminal
        total = np.zeros(np.broadcast(s, outcome.hit_lb).shape)
        for t in self.triggers:
            fill = self._fill(t.strike, outcome)
            total = total + np.where(outcome.event(t.event), t.qty * (s - fill), 0.0)
        return total

    def _fill(self, strike: float, outcome: PathOutcome):
        if strike == self.barriers.lb and outcome.fill_lb is not None:
            return np.asarray(outcome.fill_lb, dtype=float)
        if strike == self.barriers.ub and outcome.fill_ub is not None:
            return np.asarray(outcome.fill_ub, dtype=float)
        return strike


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def evaluate_payoff(blueprint: HedgeBlueprint, outcome: PathOutcome) -> np.ndarray:
    return blueprint.static.payoff(outcome.terminal) + blueprint.trigger_payoff(outcome)


def _gross(blueprint: HedgeBlueprint, outcome: PathOutcome) -> np.ndarray:
    s = outcome.terminal
    gross = np.zeros(np.broadcast(s, outcome.hit_lb).shape)
    for leg in blueprint.static.legs:
        gross = gross + np.abs(leg.payoff(s))
    for t in blueprint.triggers:
        gross = gross + np.abs(t.qty * (s - blueprint._fill(t.strike, outcome)))
    return gross


def check_pathwise(
    blueprint: HedgeBlueprint, outcome: PathOutcome, tol: float = 1e-12, raise_on_violation: bool = True
) -> np.ndarray:
    """Signed slack: payoff - indicator for superhedges, indicator - payoff for subhedges.

    The tolerance is relative to the gross size of the individual payoff
    terms, which bounds the rounding error of their sum.
    """
    payoff = evaluate_payoff(blueprint, outcome)
    ind = double_touch_indicator(outcome)
    slack = payoff - ind if blueprint.side == "super" else ind - payoff
    limit = -tol * (1.0 + _gross(blueprint, outcome))
    bad = slack < limit
    if raise_on_violation and np.any(bad):
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        pick = lambda a: np.atleast_1d(a)[i] if np.ndim(a) else a
        witness = {
            "terminal": float(pick(outcome.terminal)),
            "hit_lb": bool(pick(outcome.hit_lb)),
            "hit_ub": bool(pick(outcome.hit_ub)),
            "first": int(pick(outcome.first)),
        }
        raise InequalityViolated(f"{blueprint.side}hedge {blueprint.variant} violated at {witness}", witness, float(pick(slack)))
    return slack


def static_cost(blueprint: HedgeBlueprint, curve: CallCurve) -> float:
    return price_static(curve, blueprint.static)


# ---------------------------------------------------------------------------
# Superhedge coefficients
# ---------------------------------------------------------------------------


def uh3_coefficients(lb, ub, k1, k2, k3, k4) -> dict:
    """Closed-form uh^III coefficients; ``k1 = inf`` uses the limiting formulas."""
    k1, k2, k3, k4 = (np.asarray(x, dtype=float) for x in (k1, k2, k3, k4))
    inf1 = ~np.isfinite(k1)
    k1f = np.where(inf1, 0.0, k1)
    d = ub - lb
    # finite K1
    num = (k1f - k2) * (lb - k4) * d - (k1f - ub) * (ub - k2) * (lb - k4)
    den = (k1f - k2) * (k3 - k4) * d**2 - (k3 - lb) * (k1f - ub) * (ub - k2) * (lb - k4)
    # K1 -> inf: divide numerator and denominator by K1
    num_inf = (lb - k4) * d - (ub - k2) * (lb - k4)
    den_inf = (k3 - k4) * d**2 - (k3 - lb) * (ub - k2) * (lb - k4)
    num = np.where(inf1, num_inf, num)
    den = np.where(inf1, den_inf, den)
    with np.errstate(divide="ignore", invalid="ignore"):
        a3 = num / den
        common = 1.0 - a3 * (k3 - k4) / (lb - k4) * d
        a1 = np.where(inf1, 0.0, common / (k1f - ub))
        a2 = common / (ub - k2)
        a4 = (k3 - lb) / (lb - k4) * a3
    b1 = a1 + a2
    b2 = a3 + a4
    return {
        "alpha1": a1, "alpha2": a2, "alpha3": a3, "alpha4": a4,
        "beta1": b1, "beta2": b2, "beta3": a3 + b1, "beta4": a2 + b2, "den": den,
    }


def uh3_residuals(lb, ub, k1, k2, k3, k4, c: dict) -> np.ndarray:
    """Residuals of the six defining equations (the K1 terms are scaled out when K1 is infinite)."""
    a1, a2, a3, a4, b1, b2 = (c[k] for k in ("alpha1", "alpha2", "alpha3", "alpha4", "beta1", "beta2"))
    if math.isfinite(k1):
        r2 = a2 * (k1 - k2) - b1 * (k1 - ub)
    else:
        r2 = a2 - b1  # leading order in K1
    return np.array([
        a1 + a2 - b1,
        r2,
        a3 * (k3 - lb) - b1 * (lb - ub) - 1.0,
        a3 + a4 - b2,
        a3 * (k3 - k4) + b2 * (k4 - lb),
        a2 * (ub - k2) + b2 * (ub - lb) - 1.0,
    ], dtype=float)


def uh4_coefficients(lb, ub, spot, k1, k2) -> dict:
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    a1 = 1.0 / (k1 - lb)
    a2 = 1.0 / (ub - k2)
    a3 = ((k1 - lb) - (ub - k2)) / ((k1 - lb) * (ub - k2))
    a4 = (lb * ub - k1 * k2) / ((k1 - lb) * (ub - k2)) + a3 * spot
    return {
        "alpha1": a1, "alpha2": a2, "alpha3": a3, "alpha4": a4,
        "beta1": a1 + a3, "beta2": a2 - a3, "beta3": a1, "beta4": a2,
    }


def _f(x) -> float:
    return float(np.asarray(x, dtype=float))


def make_superhedge(variant: str, barriers: BarrierPair, strikes, spot: float | None = None) -> HedgeBlueprint:
    """Build uh^I .. uh^IV.

    ``strikes`` is K for I/II, (K1, K2, K3, K4) for III and (K1, K2) for IV.
    ``spot`` is needed for IV (the forward leg and cash amount).
    """
    lb, ub = barriers.lb, barriers.ub
    v = variant.upper()
    if v in ("I", "II"):
        k = _f(strikes[0] if isinstance(strikes, (tuple, list)) else strikes)
        if v == "I":
            if not k > lb:
                raise StrikeOrdering(f"uh^I needs K > lb, got K={k}")
            a = 1.0 / (k - lb)
            static = StaticPortfolio.of([Leg("put", k, a)])
            trig = (Trigger("hit_lb", lb, a),)
        else:
            if not k < ub:
                raise StrikeOrdering(f"uh^II needs K < ub, got K={k}")
            a = 1.0 / (ub - k)
            static = StaticPortfolio.of([Leg("call", k, a)])
            trig = (Trigger("hit_ub", ub, -a),)
        return HedgeBlueprint("super", v, barriers, {"K": k}, static, trig, {"alpha": a, "beta": a})
    if v == "III":
        k1, k2, k3, k4 = (_f(x) for x in strikes)
        if not (0.0 <= k4 < lb < k3 <= k2 < ub < k1):
            raise StrikeOrdering(f"uh^III needs 0 <= K4 < lb < K3 <= K2 < ub < K1, got {(k1, k2, k3, k4)}")
        c = {k: _f(val) for k, val in uh3_coefficients(lb, ub, k1, k2, k3, k4).items()}
        if c["den"] == 0 or not all(math.isfinite(c[k]) for k in c):
            raise SingularSystem(f"uh^III system singular at strikes {(k1, k2, k3, k4)}")
        res = uh3_residuals(lb, ub, k1, k2, k3, k4, c)
        scale = 1.0 + max(abs(c[k]) for k in ("alpha1", "alpha2", "alpha3", "alpha4")) * max(ub, k1 if math.isfinite(k1) else ub)
        if np.max(np.abs(res)) > 1e-12 * scale:
            raise SingularSystem(f"uh^III residual {np.max(np.abs(res)):.3g} too large")
        legs = [Leg("call", k2, c["alpha2"]), Leg("put", k3, c["alpha3"]), Leg("put", k4, c["alpha4"])]
        if math.isfinite(k1):
            legs.insert(0, Leg("call", k1, c["alpha1"]))
        trig = (
            Trigger("ub_first", ub, -c["beta1"]),
            Trigger("lb_first", lb, c["beta2"]),
            Trigger("ub_then_lb", lb, c["beta3"]),
            Trigger("lb_then_ub", ub, -c["beta4"]),
        )
        c.pop("den")
        return HedgeBlueprint("super", "III", barriers, {"K1": k1, "K2": k2, "K3": k3, "K4": k4},
                              StaticPortfolio.of(legs), trig, c)
    if v == "IV":
        if spot is None:
            raise ValueError("uh^IV needs the spot price")
        k1, k2 = (_f(x) for x in strikes)
        if not (0.0 <= k2 < lb < spot < ub < k1):
            raise StrikeOrdering(f"uh^IV needs 0 <= K2 < lb < S0 < ub < K1, got {(k1, k2)}")
        c = {k: _f(val) for k, val in uh4_coefficients(lb, ub, spot, k1, k2).items()}
        legs = [Leg("call", k1, c["alpha1"]), Leg("put", k2, c["alpha2"]),
                Leg("forward", spot, c["alpha3"]), Leg("cash", None, c["alpha4"])]
        trig = (
            Trigger("ub_first", ub, -c["beta1"]),
            Trigger("lb_first", lb, c["beta2"]),
            Trigger("ub_then_lb", lb, c["beta3"]),
            Trigger("lb_then_ub", ub, -c["beta4"]),
        )
        return HedgeBlueprint("super", "IV", barriers, {"K1": k1, "K2": k2}, StaticPortfolio.of(legs), trig, c)
    raise ValueError(f"unknown superhedge variant {variant!r}")


# ---------------------------------------------------------------------------
# Subhedge coefficients
# ---------------------------------------------------------------------------


def lh_threshold(lb, ub, k1, k2):
    """Intersection of the lines (lb,0)-(K1,1) and (K2,1)-(ub,0); the lh_I strike K3."""
    return (ub * k1 - lb * k2) / (ub - k2 - lb + k1)


def lh_coefficients(variant: str, lb, ub, spot, k1, k2, k3=None) -> dict:
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    v = variant.upper()
    if v == "I":
        den = (ub - k2) * (k1 - lb)
        a0 = (spot * (k1 + k2 - ub - lb) + ub * lb - k1 * k2) / den
        a1 = (k1 + k2 - ub - lb) / den
        a2 = 1.0 / (ub - k2)
        a3 = (ub - k2 + k1 - lb) / den
        k3 = lh_threshold(lb, ub, k1, k2)
        g1 = (ub - lb) / (ub - k2)
        g2 = (ub - lb) / (k1 - lb)
    else:
        k3 = np.asarray(k3, dtype=float)
        core = (ub * lb + spot * k3) * (k1 - k2) - (lb * k1 + spot * ub) * (k3 - k2) - (ub * k2 + spot * lb) * (k1 - k3)
        slope = k3 * (k1 - k2) - lb * (k1 - k3) - ub * (k3 - k2)
        if v == "II":
            den = (ub - lb) * (k1 - k3) * (ub - k2)
            a2 = 1.0 / (ub - k2)
            base = (ub - k2) * (k1 - k3)
        elif v == "III":
            den = (ub - lb) * (k3 - k2) * (k1 - lb)
            a2 = (k1 - k3) / ((k3 - k2) * (k1 - lb))
            base = (k3 - k2) * (k1 - lb)
        else:
            raise ValueError(f"unknown subhedge variant {variant!r}")
        a0 = core / den
        a1 = slope / den
        a3 = (k1 - k2) / base
        g1 = (k3 - lb) * (k1 - k2) / base
        g2 = (ub - k3) * (k1 - k2) / base
    return {"alpha0": a0, "alpha1": a1, "alpha2": a2, "alpha3": a3, "gamma1": g1, "gamma2": g2, "K3": k3}


def lh_static_legs(lb, ub, k1, k2, k3, c: dict, spot: float, weak: bool = False) -> list[Leg]:
    a0, a1, a2, a3, g1, g2 = (c[k] for k in ("alpha0", "alpha1", "alpha2", "alpha3", "gamma1", "gamma2"))
    dig_lb = "digital_geq" if weak else "digital_gt"
    dig_ub = "digital_gt" if weak else "digital_geq"
    return [
        Leg("cash", None, a0),
        Leg("forward", spot, a1),
        Leg("call", k2, -a2),
        Leg("call", lb, a3),
        Leg("call", k3, -a3),
        Leg("call", ub, a3),
        Leg("call", k1, -(a3 - a2)),
        Leg(dig_lb, lb, -g1),
        Leg(dig_ub, ub, g2),
    ]


def lh_triggers(lb, ub, c: dict) -> tuple[Trigger, ...]:
    a1, a2, a3 = c["alpha1"], c["alpha2"], c["alpha3"]
    return (
        Trigger("lb_first", lb, a2 - a1),
        Trigger("lb_then_ub", ub, -a2),
        Trigger("ub_first", ub, -(a3 - a2 + a1)),
        Trigger("ub_then_lb", lb, a3 - a2),
    )


def zero_hedge(barriers: BarrierPair) -> HedgeBlueprint:
    return HedgeBlueprint("zero", "zero", barriers, {}, StaticPortfolio(), (), {})


def make_subhedge(
    variant: str, barriers: BarrierPair, spot: float, strikes=(), weak: bool = False, threshold_tol: float = 1e-9
) -> HedgeBlueprint:
    """Build lh_I (strikes K1, K2), lh_II / lh_III (K1, K2, K3) or the zero subhedge.

    ``weak`` switches the digitals to the finite-strike convention (long
    1{S_T > ub}, short 1{S_T >= lb}) used with the payoff 1{max >= ub, min <= lb}.
    """
    v = variant.upper() if variant != "zero" else "zero"
    if v in ("ZERO", "IV", "zero"):
        return zero_hedge(barriers)
    lb, ub = barriers.lb, barriers.ub
    k1, k2 = _f(strikes[0]), _f(strikes[1])
    if not (0.0 <= k2 < lb < spot < ub < k1):
        raise StrikeOrdering(f"subhedges need 0 <= K2 < lb < S0 < ub < K1, got K1={k1}, K2={k2}")
    if v == "I":
        c = {k: _f(x) for k, x in lh_coefficients("I", lb, ub, spot, k1, k2).items()}
    elif v in ("II", "III"):
        k3 = _f(strikes[2])
        if not lb < k3 < ub:
            raise StrikeOrdering(f"K3 must lie in (lb, ub), got {k3}")
        thr = _f(lh_threshold(lb, ub, k1, k2))
        slack = threshold_tol * ub
        if v == "II" and k3 > thr + slack:
            raise ThresholdSide(f"lh_II needs K3 <= {thr:.10g}, got {k3}")
        if v == "III" and k3 < thr - slack:
            raise ThresholdSide(f"lh_III needs K3 >= {thr:.10g}, got {k3}")
        c = {k: _f(x) for k, x in lh_coefficients(v, lb, ub, spot, k1, k2, k3).items()}
    else:
        raise ValueError(f"unknown subhedge variant {variant!r}")
    k3 = c["K3"]
    legs = lh_static_legs(lb, ub, k1, k2, k3, c, spot, weak)
    coeffs = {k: c[k] for k in ("alpha0", "alpha1", "alpha2", "alpha3", "gamma1", "gamma2")}
    return HedgeBlueprint("sub", v, barriers, {"K1": k1, "K2": k2, "K3": k3}, StaticPortfolio.of(legs),
                          lh_triggers(lb, ub, c), coeffs)


def random_outcomes(
    rng: np.random.Generator, lb: float, ub: float, n: int, s_max: float, jumps: bool = False
) -> PathOutcome:
    """Random outcomes consistent with a path that crosses barriers continuously.

    Never reaching ub forces S_T < ub, never reaching lb forces S_T > lb.
    With ``jumps`` the forwards are filled beyond the barrier (at an
    overshoot) instead of at the barrier itself.
    """
    kind = rng.integers(0, 6, size=n)  # neither, lb only, ub only, lb->ub, ub->lb, boundary-hugging
    hit_lb = np.isin(kind, (1, 3, 4))
    hit_ub = np.isin(kind, (2, 3, 4))
    first = np.where(kind == 1, FIRST_LB, np.where(kind == 2, FIRST_UB, FIRST_NONE))
    first = np.where(kind == 3, FIRST_LB, np.where(kind == 4, FIRST_UB, first))
    u = rng.random(n)
    s = np.empty(n)
    s[kind == 0] = lb + (ub - lb) * u[kind == 0]
    m = kind == 1
    s[m] = ub * u[m]
    m = kind == 2
    s[m] = lb + (s_max - lb) * u[m]
    m = (kind == 3) | (kind == 4)
    s[m] = s_max * u[m]
    # kind 5: terminal exactly at a barrier or a level of interest, both hit
    m = kind == 5
    hit_lb[m] = True
    hit_ub[m] = True
    first[m] = np.where(rng.random(m.sum()) < 0.5, FIRST_LB, FIRST_UB)
    s[m] = rng.choice(np.array([0.0, lb, ub, 0.5 * (lb + ub)]), size=m.sum())
    fill_lb = fill_ub = None
    if jumps:
        fill_lb = lb * (1.0 - 0.3 * rng.random(n))
        fill_ub = ub * (1.0 + 0.3 * rng.random(n))
    return PathOutcome(s, hit_lb, hit_ub, first, fill_lb, fill_ub)
