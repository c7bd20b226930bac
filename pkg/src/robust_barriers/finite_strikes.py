"""Finitely many traded strikes: price envelopes, extremal surfaces, discretized hedges.

A payoff that is piecewise linear with knots only at traded strikes is a
portfolio of cash, a forward and the traded calls, so its price is fixed by
the quotes alone.  Every hedge here is reduced to such a payoff: the static
part of a superhedge is replaced by its chord interpolation at the quotes
(it is convex, so the chord dominates), the static part of a subhedge by the
best piecewise-linear minorant, found with a small linear programme on the
cells that contain kinks or jumps.  Triggered forward trades are unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .barycentre import BarrierPair
from .bounds import PriceBound, lower_bound, upper_bound
from .errors import ArbitrageViolation, DomainError, DominanceFailed, InsufficientQuotes, RobustBarrierError
from .hedges import (
    HedgeBlueprint,
    lh_threshold,
    make_subhedge,
    make_superhedge,
    uh3_coefficients,
    uh4_coefficients,
    zero_hedge,
)
from .market_input import CallCurve, DiscreteLaw, Leg, QuoteTable, StaticPortfolio, check_no_arbitrage


@dataclass(frozen=True)
class QuoteSet:
    """Traded strikes 0 = x_0 < ... < x_N with call prices; x_0 is priced at the spot."""

    strikes: np.ndarray
    prices: np.ndarray
    spot: float
    digitals_traded: bool = False

    def __post_init__(self):
        x = np.asarray(self.strikes, dtype=float)
        c = np.asarray(self.prices, dtype=float)
        order = np.argsort(x)
        x, c = x[order], c[order]
        if x.size == 0 or x[0] > 0:
            x = np.concatenate([[0.0], x])
            c = np.concatenate([[self.spot], c])
        bad = check_no_arbitrage(x, c, self.spot, tol=1e-10)
        if bad:
            raise ArbitrageViolation("; ".join(f"{v.kind} at strike {v.strike}" for v in bad))
        if abs(c[0] - self.spot) > 1e-10 * self.spot:
            raise ArbitrageViolation(f"zero-strike price {c[0]} differs from spot {self.spot}")
        object.__setattr__(self, "strikes", x)
        object.__setattr__(self, "prices", c)

    @classmethod
    def from_table(cls, table: QuoteTable) -> "QuoteSet":
        return cls(table.strikes, table.prices, table.spot)

    @classmethod
    def sample(cls, curve: CallCurve, strikes) -> "QuoteSet":
        """Quotes read off a call curve at the given strikes."""
        k = np.asarray(strikes, dtype=float)
        return cls(k, curve.value(k), curve.spot)

    @property
    def n(self) -> int:
        return self.strikes.size

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.prices) / np.diff(self.strikes)

    def tail_point(self) -> float | None:
        """Where the linear extension beyond the last quote reaches zero (None if already zero)."""
        c_n = self.prices[-1]
        if c_n <= 0:
            return None
        s = self.slopes[-1]
        if s >= 0:
            raise InsufficientQuotes("last quoted price is positive but the quoted curve is flat there")
        return float(self.strikes[-1] + c_n / -s)


# ---------------------------------------------------------------------------
# Envelope and extremal surfaces
# ---------------------------------------------------------------------------


def price_envelope(quotes: QuoteSet, k) -> tuple[np.ndarray, np.ndarray]:
    """No-arbitrage (lower, upper) range of the call price at unquoted strikes."""
    k = np.asarray(k, dtype=float)
    x, c = quotes.strikes, quotes.prices
    if np.any(k < x[0]) or np.any(k > x[-1]):
        raise DomainError(f"strikes must lie in the quoted range [{x[0]}, {x[-1]}]")
    j = np.clip(np.searchsorted(x, k, side="right") - 1, 0, x.size - 2)
    x0, x1, c0, c1 = x[j], x[j + 1], c[j], c[j + 1]
    t = (k - x0) / (x1 - x0)
    upper = (1 - t) * c0 + t * c1
    lower = np.maximum(quotes.spot - k, 0.0)
    s = quotes.slopes
    has_prev = j >= 1
    fwd = c0 + np.where(has_prev, s[np.maximum(j - 1, 0)], -1.0) * (k - x0)
    lower = np.maximum(lower, fwd)
    has_next = j + 2 <= x.size - 1
    bwd = c1 + np.where(has_next, s[np.minimum(j + 1, s.size - 1)], 0.0) * (k - x1)
    lower = np.maximum(lower, np.where(has_next, bwd, 0.0))
    # exactly at a quote the range collapses
    at = np.isclose(k, x0, rtol=0, atol=0) | np.isclose(k, x1, rtol=0, atol=0)
    val = np.where(k == x0, c0, c1)
    lower = np.where(at, val, np.minimum(lower, upper))
    upper = np.where(at, val, upper)
    return lower, upper


def _polygon_law(nodes: np.ndarray, values: np.ndarray) -> DiscreteLaw:
    """Atomic law whose call curve is the polygon through (nodes, values), extended linearly to zero."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    if values[-1] > 0:
        s = (values[-1] - values[-2]) / (nodes[-1] - nodes[-2])
        nodes = np.append(nodes, nodes[-1] + values[-1] / -s)
        values = np.append(values, 0.0)
    slopes = np.diff(values) / np.diff(nodes)
    full = np.concatenate([[-1.0], slopes, [0.0]])
    masses = np.maximum(np.diff(full), 0.0)
    return DiscreteLaw(nodes, masses, hi=nodes[-1])


def upper_surface(quotes: QuoteSet) -> CallCurve:
    """Linear interpolation of the quotes: mass only at traded strikes (and the tail point)."""
    law = _polygon_law(quotes.strikes, quotes.prices)
    return CallCurve(law, "finite-upper", quotes.spot, {"n_quotes": quotes.n})


def _flanked(quotes: QuoteSet, level: float) -> int:
    x = quotes.strikes
    j = int(np.searchsorted(x, level, side="right") - 1)
    if j < 0 or j >= x.size - 1:
        raise InsufficientQuotes(f"barrier {level} has no flanking pair of quotes")
    return j


def lower_kinked(quotes: QuoteSet, barriers: BarrierPair) -> CallCurve:
    """Admissible completion with the lowest call prices at lb and ub, kinked there.

    Each quote gets a subgradient between its neighbouring chord slopes and a
    gap holding a barrier is filled with the upper envelope of the two tangent
    lines.  Taking the flattest left and steepest right tangent gives the
    envelope's lower edge.  When both barriers sit in the two gaps around one
    quote they compete for its subgradient; the one minimising the sum of the
    two kink prices is used.
    """
    x, c = quotes.strikes, quotes.prices
    sl = quotes.slopes
    lo_t = np.concatenate([[-1.0], sl])
    hi_t = np.concatenate([sl, [0.0]])
    gaps = sorted({_flanked(quotes, level) for level in (barriers.lb, barriers.ub)})
    t = hi_t.copy()
    for j in gaps:
        t[j] = lo_t[j]
        t[j + 1] = hi_t[j + 1]

    def tangent_curve(k, tv):
        k = np.asarray(k, dtype=float)
        j = np.clip(np.searchsorted(x, k, side="right") - 1, 0, x.size - 2)
        return np.maximum(c[j] + tv[j] * (k - x[j]), c[j + 1] + tv[j + 1] * (k - x[j + 1]))

    levels = np.array([barriers.lb, barriers.ub])
    if len(gaps) == 2 and gaps[1] == gaps[0] + 1:
        i = gaps[1]
        cands = [lo_t[i], hi_t[i]]
        for level, other in ((barriers.lb, gaps[0]), (barriers.ub, gaps[1] + 1)):
            # subgradient at which the tangent through x_i stops binding at this level
            fixed = c[other] + t[other] * (level - x[other])
            if level != x[i]:
                cands.append((fixed - c[i]) / (level - x[i]))
        cands = np.clip(cands, lo_t[i], hi_t[i])

        def total(ti):
            tv = t.copy()
            tv[i] = ti
            return float(np.sum(tangent_curve(levels, tv)))

        t[i] = min(cands, key=total)
    nodes = list(x)
    for j in gaps:
        if t[j + 1] > t[j]:
            k = (c[j + 1] - c[j] + t[j] * x[j] - t[j + 1] * x[j + 1]) / (t[j] - t[j + 1])
            if x[j] < k < x[j + 1]:
                nodes.append(float(k))
    nodes.extend(level for level in levels if level not in x)
    nodes = np.unique(np.asarray(nodes, dtype=float))
    law = _polygon_law(nodes, tangent_curve(nodes, t))
    return CallCurve(law, "finite-lower-kinked", quotes.spot, {"n_quotes": quotes.n})


def extremal_surfaces(quotes: QuoteSet, barriers: BarrierPair) -> dict:
    return {"upper_surface": upper_surface(quotes), "lower_kinked": lower_kinked(quotes, barriers)}


# ---------------------------------------------------------------------------
# Discretized hedges
# ---------------------------------------------------------------------------


def _breakpoints(static: StaticPortfolio) -> np.ndarray:
    pts = [leg.param for leg in static.legs if leg.kind in ("call", "put", "digital_geq", "digital_gt")]
    return np.unique(np.asarray(pts, dtype=float))


def _limits(static: StaticPortfolio, s: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(left limit, value, right limit) of a piecewise-linear payoff, by linear extrapolation."""
    left = 2 * static.payoff(s - eps) - static.payoff(s - 2 * eps)
    right = 2 * static.payoff(s + eps) - static.payoff(s + 2 * eps)
    return left, static.payoff(s), right


def _tail_slope(static: StaticPortfolio, x_n: float, scale: float) -> float:
    return float((static.payoff(np.array([x_n + 2 * scale]))[0] - static.payoff(np.array([x_n + scale]))[0]) / scale)


def _nodal_legs(x: np.ndarray, v: np.ndarray, tail_slope: float, spot: float) -> list[Leg]:
    """Cash, forward and traded calls replicating the polygon through (x, v) with the given tail slope."""
    slopes = np.append(np.diff(v) / np.diff(x), tail_slope)
    kinks = np.diff(slopes)
    legs = [Leg("cash", None, float(v[0] + slopes[0] * (spot - x[0]))), Leg("forward", spot, float(slopes[0]))]
    for xi, q in zip(x[1:], kinks):
        if q != 0.0:
            legs.append(Leg("call", float(xi), float(q)))
    return legs


def _sub_nodes(static: StaticPortfolio, x: np.ndarray, weights: np.ndarray, eps: float) -> np.ndarray:
    """Nodal values of the best minorant with knots at x, maximising weights @ v."""
    lft, val, rgt = _limits(static, x, eps)
    ub_node = np.minimum(val, np.minimum(np.where(np.arange(x.size) > 0, lft, val), rgt))
    bps = _breakpoints(static)
    inner = bps[(bps > x[0]) & (bps < x[-1]) & ~np.isin(bps, x)]
    if inner.size == 0:
        return ub_node
    cells = np.searchsorted(x, inner, side="right") - 1
    bl, bv, br = _limits(static, inner, eps)
    cap = np.minimum(np.minimum(bl, bv), br)
    # right end of each coupled cell uses the left limit only, left end the right limit only
    ub_node = ub_node.copy()
    coupled = np.unique(np.concatenate([cells, cells + 1]))
    idx = {j: i for i, j in enumerate(coupled)}
    a_ub = np.zeros((inner.size, coupled.size))
    for r, (j, b) in enumerate(zip(cells, inner)):
        t = (b - x[j]) / (x[j + 1] - x[j])
        a_ub[r, idx[j]] = 1 - t
        a_ub[r, idx[j + 1]] = t
    c_obj = -weights[coupled] - 1e-12  # tiny push keeps unpriced nodes at their caps
    res = optimize.linprog(c_obj, A_ub=a_ub, b_ub=cap, bounds=[(None, ub_node[j]) for j in coupled], method="highs")
    if res.status != 0:
        raise DominanceFailed(f"subhedge discretization LP failed: {res.message}")
    out = ub_node.copy()
    out[coupled] = res.x
    return out


def discretize_hedge(blueprint: HedgeBlueprint, quotes: QuoteSet, check: bool = True,
                     n_check: int = 10_000) -> HedgeBlueprint:
    """Replace the static part by a payoff built only from traded strikes.

    Superhedges get the chord interpolation of their (convex) static payoff,
    subhedges the best minorant priced by the quotes.  Triggers are kept.
    """
    if blueprint.side == "zero":
        return blueprint
    x = quotes.strikes
    x_n = float(x[-1])
    scale = max(x_n, 1.0)
    bps = _breakpoints(blueprint.static)
    if bps.size and (bps.max() > x_n or bps.min() < 0):
        raise InsufficientQuotes(f"hedge strikes {bps.min():.6g}..{bps.max():.6g} fall outside the quoted range")
    eps = 1e-7 * scale
    tail = _tail_slope(blueprint.static, x_n, 1e-3 * scale)
    if blueprint.side == "super":
        v = blueprint.static.payoff(x)
    else:
        weights = _node_weights(quotes)
        v = _sub_nodes(blueprint.static, x, weights, eps)
    legs = _nodal_legs(x, v, tail, quotes.spot)
    new = HedgeBlueprint(blueprint.side, blueprint.variant, blueprint.barriers, dict(blueprint.strikes),
                         StaticPortfolio.of(legs), blueprint.triggers,
                         dict(blueprint.coefficients, discretized=True))
    if check:
        _check_dominance(blueprint, new, x, n_check, eps)
    return new


def _check_dominance(orig: HedgeBlueprint, new: HedgeBlueprint, x: np.ndarray, n: int, eps: float) -> None:
    top = float(x[-1]) * 1.5
    s = np.unique(np.concatenate([np.linspace(0.0, top, n), x, _breakpoints(orig.static)]))
    lft, val, rgt = _limits(orig.static, s, eps)
    nl, nv, nr = _limits(new.static, s, eps)
    gross = 1.0 + sum(abs(leg.qty) * (1.0 + top) for leg in orig.static.legs + new.static.legs)
    tol = 1e-10 * gross
    if new.side == "super":
        gap = np.minimum(np.minimum(nv - val, nl - lft), nr - rgt)
    else:
        gap = np.minimum(np.minimum(val - nv, lft - nl), rgt - nr)
    gap = gap[1:] if gap.size > 1 else gap
    if np.min(gap) < -tol:
        i = int(np.argmin(gap))
        raise DominanceFailed(f"discretized {new.side}hedge fails dominance by {-gap[i]:.3g} near S_T={s[i + 1]:.6g}")


def _node_weights(quotes: QuoteSet) -> np.ndarray:
    """Prices of the nodal hat payoffs: masses of the linear-interpolation law at the quotes.

    The tail mass beyond the last quote sits at the tail point and is
    carried by the last node together with the tail slope.
    """
    law = upper_surface(quotes).law
    pts, ms = law.atoms
    w = np.zeros(quotes.n)
    pos = np.searchsorted(quotes.strikes, pts)
    inside = (pos < quotes.n) & (quotes.strikes[np.minimum(pos, quotes.n - 1)] == pts)
    np.add.at(w, pos[inside], ms[inside])
    w[-1] += ms[~inside].sum()
    return w


def quoted_cost(blueprint: HedgeBlueprint, quotes: QuoteSet) -> float:
    """Price of a blueprint whose static legs use only traded strikes."""
    curve = upper_surface(quotes)
    total = 0.0
    for leg in blueprint.static.legs:
        if leg.kind == "call":
            if leg.param not in quotes.strikes:
                raise InsufficientQuotes(f"call strike {leg.param} is not traded")
            total += leg.qty * float(curve.value(leg.param))
        elif leg.kind == "put":
            if leg.param not in quotes.strikes:
                raise InsufficientQuotes(f"put strike {leg.param} is not traded")
            total += leg.qty * float(leg.param - quotes.spot + curve.value(leg.param))
        elif leg.kind == "cash":
            total += leg.qty
        elif leg.kind == "forward":
            pass
        else:
            raise InsufficientQuotes(f"{leg.kind} is not traded")
    return float(total)


# ---------------------------------------------------------------------------
# Finite-strike bounds
# ---------------------------------------------------------------------------


def _search(axes: list[np.ndarray], cost, sense: float, seeds: list[tuple] = (), limit: int = 2_000_000,
            window: int = 6) -> tuple[float, tuple]:
    """Optimise cost over the product of candidate axes (sense=+1 minimise, -1 maximise).

    Exhaustive when the product is small, otherwise a strided pass followed by
    exhaustive windows around its best point and around the seeds.
    """
    sizes = [a.size for a in axes]
    if min(sizes) == 0:
        return math.inf * sense, ()

    def run(index_lists):
        grids = np.meshgrid(*[axes[d][idx] for d, idx in enumerate(index_lists)], indexing="ij")
        val = np.asarray(cost(*grids), dtype=float)
        val = np.where(np.isfinite(val), sense * val, np.inf)
        if not np.isfinite(val).any():
            return math.inf, None
        flat = int(np.argmin(val))
        pos = np.unravel_index(flat, val.shape)
        return float(val[pos]), tuple(int(index_lists[d][p]) for d, p in enumerate(pos))

    if math.prod(sizes) <= limit:
        best, pos = run([np.arange(s) for s in sizes])
    else:
        m = max(2, int(limit ** (1.0 / len(axes)) / 2))
        strided = [np.unique(np.linspace(0, s - 1, min(s, m)).astype(int)) for s in sizes]
        best, pos = run(strided)
        centres = [pos] if pos is not None else []
        for seed in seeds:
            centres.append(tuple(int(np.argmin(np.abs(axes[d] - v))) for d, v in enumerate(seed)))
        for c in centres:
            win = [np.arange(max(0, c[d] - window), min(sizes[d], c[d] + window + 1)) for d in range(len(axes))]
            b, p = run(win)
            if b < best:
                best, pos = b, p
    if pos is None:
        return math.inf * sense, ()
    return sense * best, tuple(float(axes[d][pos[d]]) for d in range(len(axes)))


def _upper_candidates(quotes: QuoteSet, bar: BarrierPair, seeds: dict) -> dict:
    x = quotes.strikes
    lb, ub, s0 = bar.lb, bar.ub, quotes.spot
    curve = upper_surface(quotes)
    call = lambda k: curve.value(k)
    put = lambda k: k - s0 + curve.value(k)
    out = {}
    k_i = x[x > lb]
    if k_i.size:
        v = put(k_i) / (k_i - lb)
        i = int(np.argmin(v))
        out["I"] = (float(v[i]), (float(k_i[i]),))
    k_ii = x[x < ub]
    if k_ii.size:
        v = call(k_ii) / (ub - k_ii)
        i = int(np.argmin(v))
        out["II"] = (float(v[i]), (float(k_ii[i]),))
    above, below = x[x > ub], x[x < lb]

    def cost_iv(k1, k2):
        c = uh4_coefficients(lb, ub, s0, k1, k2)
        return c["alpha1"] * call(k1) + c["alpha2"] * put(k2) + c["alpha4"]

    val, ks = _search([above, below], cost_iv, +1.0, seeds.get("IV", ()))
    if ks:
        out["IV"] = (val, ks)
    mid = x[(x > lb) & (x < ub)]

    def cost_iii(k1, k2, k3, k4):
        c = uh3_coefficients(lb, ub, k1, k2, k3, k4)
        ok = (k3 <= k2) & (c["den"] != 0)
        for name in ("alpha1", "alpha2", "alpha3", "alpha4"):
            ok &= np.isfinite(c[name]) & (c[name] >= -1e-12)
        c1 = np.where(np.isfinite(k1), call(np.where(np.isfinite(k1), k1, x[-1])), 0.0)
        v = c["alpha1"] * c1 + c["alpha2"] * call(k2) + c["alpha3"] * put(k3) + c["alpha4"] * put(k4)
        return np.where(ok, v, np.nan)

    val, ks = _search([np.append(above, math.inf), mid, mid, below], cost_iii, +1.0, seeds.get("III", ()),
                      limit=400_000, window=4)
    if ks:
        out["III"] = (val, ks)
    return out


def _sub_value(variant: str, bar: BarrierPair, quotes: QuoteSet, strikes) -> tuple[float, HedgeBlueprint | None]:
    try:
        bp = make_subhedge(variant, bar, quotes.spot, strikes, weak=True, threshold_tol=1e-12)
        bp = discretize_hedge(bp, quotes, check=False)
        return quoted_cost(bp, quotes), bp
    except RobustBarrierError:
        return -math.inf, None


def _lower_candidates(quotes: QuoteSet, bar: BarrierPair, seeds: dict, limit: int = 400) -> dict:
    x = quotes.strikes
    lb, ub = bar.lb, bar.ub
    above, below, mid = x[(x > ub)], x[x < lb], x[(x > lb) & (x < ub)]
    out = {}

    def cost(variant):
        def f(k1, k2, k3=None):
            vals = np.full(np.shape(k1), -math.inf)
            for pos in np.ndindex(np.shape(k1)):
                ks = (k1[pos], k2[pos]) if k3 is None else (k1[pos], k2[pos], k3[pos])
                if k3 is not None:
                    thr = lh_threshold(lb, ub, ks[0], ks[1])
                    if (variant == "II" and ks[2] > thr) or (variant == "III" and ks[2] < thr):
                        continue
                vals[pos] = _sub_value(variant, bar, quotes, ks)[0]
            return vals
        return f

    val, ks = _search([above, below], cost("I"), -1.0, seeds.get("I", ()), limit=limit, window=3)
    if ks:
        out["I"] = (val, ks)
    for variant in ("II", "III"):
        val, ks = _search([above, below, mid], cost(variant), -1.0, seeds.get(variant, ()), limit=limit, window=2)
        if ks:
            out[variant] = (val, ks)
    return out


def _continuum_seeds(completion: CallCurve | None, bar: BarrierPair) -> tuple[dict, dict, dict]:
    if completion is None:
        return {}, {}, {}
    up_seeds: dict = {}
    lo_seeds: dict = {}
    info: dict = {}
    try:
        up = upper_bound(completion, bar, check=False, strict=False)
        info["continuum_upper"] = up.value
        s = up.params
        if up.case == "IV":
            up_seeds["IV"] = [(s["K1"], s["K2"])]
        elif up.case == "III":
            up_seeds["III"] = [(s["K1"], s["K2"], s["K3"], s["K4"])]
    except RobustBarrierError as exc:
        info["continuum_upper_error"] = str(exc)
    try:
        lo = lower_bound(completion, bar, check=False, strict=False)
        info["continuum_lower"] = lo.value
        s = lo.params
        if lo.case in ("I", "II", "III"):
            seed = (s["K1"], s["K2"], s["K3"])
            lo_seeds["I"] = [seed[:2]]
            lo_seeds["II"] = lo_seeds["III"] = [seed]
    except RobustBarrierError as exc:
        info["continuum_lower_error"] = str(exc)
    return up_seeds, lo_seeds, info


def finite_bounds(quotes: QuoteSet, barriers: BarrierPair, completion: CallCurve | None = None) -> dict:
    """Cheapest discretized superhedge and best discretized subhedge (weak payoff).

    Candidate strikes are the traded strikes.  With many quotes the search is
    seeded by the continuum optimum on ``completion`` (a smooth curve matching
    the quotes) and refined locally.
    """
    bar = barriers
    x = quotes.strikes
    if not (x[0] < bar.lb < quotes.spot < bar.ub < x[-1]):
        raise InsufficientQuotes("quotes must straddle both barriers")
    _flanked(quotes, bar.lb)
    _flanked(quotes, bar.ub)
    up_seeds, lo_seeds, info = _continuum_seeds(completion, bar)

    ups = _upper_candidates(quotes, bar, up_seeds)
    if not ups:
        raise InsufficientQuotes("no superhedge can be built from the traded strikes")
    case = min(ups, key=lambda k: ups[k][0])
    value, ks = ups[case]
    bp = make_superhedge(case, bar, ks if case not in ("I", "II") else ks[0], spot=quotes.spot)
    bp = discretize_hedge(bp, quotes)
    names = {"I": ("K",), "II": ("K",), "III": ("K1", "K2", "K3", "K4"), "IV": ("K1", "K2")}[case]
    upper = PriceBound("upper", case, dict(zip(names, ks)), quoted_cost(bp, quotes), bp,
                       {"family_costs": {k: v[0] for k, v in ups.items()}, **info})

    los = _lower_candidates(quotes, bar, lo_seeds)
    los = {k: v for k, v in los.items() if math.isfinite(v[0])}
    best = max(los, key=lambda k: los[k][0]) if los else None
    if best is None or los[best][0] <= 0.0:
        lower = PriceBound("lower", "IV", {}, 0.0, zero_hedge(bar),
                           {"family_values": {k: v[0] for k, v in los.items()}, **info})
    else:
        value, ks = los[best]
        raw = make_subhedge(best, bar, quotes.spot, ks, weak=True, threshold_tol=1e-12)
        bp = discretize_hedge(raw, quotes)
        lower = PriceBound("lower", best, dict(zip(("K1", "K2", "K3"), ks)), value, bp,
                           {"family_values": {k: v[0] for k, v in los.items()}, **info})
    return {"upper": upper, "lower": lower}
