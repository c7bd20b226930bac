"""Market input: call price curves, the implied terminal law and static pricing.

A call curve ``C(K)`` on ``[0, K_max]`` is stored through its second
derivative, the implied law ``mu``.  Every law exposes cumulative mass and
cumulative first moment, from which calls, puts, digitals and the partial
moments used by the barycentre module are all derived exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, special, stats

from .errors import ArbitrageViolation, DomainError

FAMILIES = ("analytic-uniform-terminal", "analytic-lognormal", "grid-interpolated", "heston-implied")


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# Laws
# ---------------------------------------------------------------------------


class ImpliedLaw:
    """Terminal law on ``[0, hi]``.

    Subclasses implement ``cdf`` (mass of ``[0, x]``), ``cdf_left`` (mass of
    ``[0, x)``), ``moment_cdf`` (first moment over ``[0, x]``) and
    ``density``.  All methods are vectorised.
    """

    spot: float
    hi: float
    lo: float = 0.0

    def cdf(self, x):
        raise NotImplementedError

    def cdf_left(self, x):
        return self.cdf(x)

    def moment_cdf(self, x):
        raise NotImplementedError

    def moment_cdf_left(self, x):
        return self.moment_cdf(x)

    def density(self, x):
        raise NotImplementedError

    @property
    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        return np.empty(0), np.empty(0)

    # derived quantities -------------------------------------------------
    def mass(self, a, b):
        """mu((a, b]); for atomless laws the endpoint convention is immaterial."""
        return self.cdf(b) - self.cdf(a)

    def partial_moment(self, a, b):
        """Integral of u over (a, b]."""
        return self.moment_cdf(b) - self.moment_cdf(a)

    def total_mass(self) -> float:
        return float(self.cdf(self.hi))

    def mean(self) -> float:
        return float(self.moment_cdf(self.hi))

    def call(self, k):
        k = _arr(k)
        kc = np.clip(k, 0.0, self.hi)
        return (self.moment_cdf(self.hi) - self.moment_cdf(kc)) - kc * (self.cdf(self.hi) - self.cdf(kc))

    def quantile(self, p, tol: float = 1e-12):
        """Smallest x with cdf(x) >= p, by vectorised bisection."""
        p = _arr(p)
        lo = np.zeros_like(p)
        hi = np.full_like(p, self.hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo < tol * max(1.0, self.hi)):
                break
        return hi


class UniformLaw(ImpliedLaw):
    """Uniform terminal law on ``[a, b]``; the spot is the midpoint."""

    def __init__(self, a: float, b: float):
        if not (0.0 <= a < b):
            raise DomainError(f"uniform support must satisfy 0 <= a < b, got [{a}, {b}]")
        self.a = float(a)
        self.b = float(b)
        self.hi = float(b)
        self.spot = 0.5 * (a + b)

    def cdf(self, x):
        return np.clip((_arr(x) - self.a) / (self.b - self.a), 0.0, 1.0)

    def moment_cdf(self, x):
        x = np.clip(_arr(x), self.a, self.b)
        return (x * x - self.a * self.a) / (2.0 * (self.b - self.a))

    def density(self, x):
        x = _arr(x)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)


class LognormalLaw(ImpliedLaw):
    """Driftless lognormal law with total volatility ``sigma`` (i.e. sigma*sqrt(T)).

    The support is truncated at ``hi`` where the call price falls below
    ``tail * spot`` and the law is renormalised on ``[0, hi]``.
    """

    def __init__(self, spot: float, sigma: float, hi: float | None = None, tail: float = 1e-10):
        if spot <= 0 or sigma <= 0:
            raise DomainError("lognormal law needs spot > 0 and sigma > 0")
        self.spot = float(spot)
        self.sigma = float(sigma)
        if hi is None:
            def untruncated_call(k):
                d1 = (math.log(self.spot / k) + 0.5 * sigma**2) / sigma
                return self.spot * special.ndtr(d1) - k * special.ndtr(d1 - sigma)

            hi = self.spot
            while untruncated_call(hi) > tail * self.spot:
                hi *= 1.5
            hi = optimize.brentq(lambda k: untruncated_call(k) - tail * self.spot, hi / 1.5, hi)
        self.hi = float(hi)
        self._z = float(special.ndtr(self._d(self.hi)))
        self._zm = float(special.ndtr(self._d(self.hi) - self.sigma))

    def _d(self, x):
        with np.errstate(divide="ignore"):
            return (np.log(_arr(x) / self.spot) + 0.5 * self.sigma**2) / self.sigma

    def cdf(self, x):
        x = np.clip(_arr(x), 0.0, self.hi)
        return special.ndtr(self._d(x)) / self._z

    def moment_cdf(self, x):
        x = np.clip(_arr(x), 0.0, self.hi)
        # renormalised so the truncated law keeps mean spot
        return self.spot * special.ndtr(self._d(x) - self.sigma) / self._zm

    def density(self, x):
        x = _arr(x)
        inside = (x > 0) & (x <= self.hi)
        xs = np.where(inside, x, 1.0)
        pdf = stats.lognorm.pdf(xs, s=self.sigma, scale=self.spot * math.exp(-0.5 * self.sigma**2))
        return np.where(inside, pdf / self._z, 0.0)

    def mean(self) -> float:
        return self.spot


class TabulatedLaw(ImpliedLaw):
    """Piecewise-linear density on a node mesh, with exact cell integrals.

    Nodal values are tilted by ``(a + b*y)`` so that mass is exactly one and
    the mean equals ``spot``; the tilt is tiny for well-fitted inputs.
    """

    def __init__(self, nodes: Sequence[float], values: Sequence[float], spot: float, tilt: bool = True):
        y = _arr(nodes)
        f = np.maximum(_arr(values), 0.0)
        if y.ndim != 1 or y.size < 2 or np.any(np.diff(y) <= 0):
            raise DomainError("tabulated law needs strictly increasing nodes")
        if y[0] < 0:
            raise DomainError("tabulated law nodes must be non-negative")
        h = np.diff(y)
        w = np.zeros_like(y)
        w[:-1] += h / 2
        w[1:] += h / 2
        v = np.zeros_like(y)
        v[:-1] += h * (2 * y[:-1] + y[1:]) / 6
        v[1:] += h * (y[:-1] + 2 * y[1:]) / 6
        if tilt:
            m0 = float(w @ f)
            m1 = float(v @ f)
            m2 = float(v @ (f * y))
            if m0 <= 0:
                raise DomainError("tabulated density has zero mass")
            # tilt (a + b*(y - spot)); least squares keeps the degenerate
            # one-node case well posed (it returns a = 1/m0, b = 0)
            mat = np.array([[m0, m1 - spot * m0], [m1, m2 - spot * m1]])
            (a, b), *_ = np.linalg.lstsq(mat, np.array([1.0, spot]), rcond=None)
            f = f * np.maximum(a + b * (y - spot), 0.0)
        self.nodes = y
        self.values = f
        self.spot = float(spot)
        self.hi = float(y[-1])
        self._h = h
        self._g = np.diff(f) / h
        cell_mass = f[:-1] * h + self._g * h * h / 2
        cell_mom = y[:-1] * f[:-1] * h + (y[:-1] * self._g + f[:-1]) * h * h / 2 + self._g * h**3 / 3
        self._cm = np.concatenate([[0.0], np.cumsum(cell_mass)])
        self._cq = np.concatenate([[0.0], np.cumsum(cell_mom)])

    def _locate(self, x):
        x = np.clip(_arr(x), self.nodes[0], self.hi)
        k = np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, self.nodes.size - 2)
        return x, k, x - self.nodes[k]

    def cdf(self, x):
        x, k, t = self._locate(x)
        return self._cm[k] + self.values[k] * t + self._g[k] * t * t / 2

    def moment_cdf(self, x):
        x, k, t = self._locate(x)
        y0 = self.nodes[k]
        f0 = self.values[k]
        g = self._g[k]
        return self._cq[k] + y0 * f0 * t + (y0 * g + f0) * t * t / 2 + g * t**3 / 3

    def density(self, x):
        x = _arr(x)
        inside = (x >= self.nodes[0]) & (x <= self.hi)
        return np.where(inside, np.interp(x, self.nodes, self.values), 0.0)


class DiscreteLaw(ImpliedLaw):
    """Purely atomic law, used for finite-strike extremal call surfaces."""

    def __init__(self, points: Sequence[float], masses: Sequence[float], hi: float | None = None):
        x = _arr(points)
        p = _arr(masses)
        order = np.argsort(x)
        x, p = x[order], p[order]
        keep = p > 0
        x, p = x[keep], p[keep]
        if x.size == 0:
            raise DomainError("discrete law needs at least one atom")
        self.points = x
        self.masses = p / p.sum()
        self.spot = float(self.points @ self.masses)
        self.hi = float(max(x[-1], hi if hi is not None else x[-1]))
        self._cm = np.concatenate([[0.0], np.cumsum(self.masses)])
        self._cq = np.concatenate([[0.0], np.cumsum(self.masses * self.points)])

    @property
    def atoms(self):
        return self.points, self.masses

    def cdf(self, x):
        return self._cm[np.searchsorted(self.points, _arr(x), side="right")]

    def cdf_left(self, x):
        return self._cm[np.searchsorted(self.points, _arr(x), side="left")]

    def moment_cdf(self, x):
        return self._cq[np.searchsorted(self.points, _arr(x), side="right")]

    def moment_cdf_left(self, x):
        return self._cq[np.searchsorted(self.points, _arr(x), side="left")]

    def density(self, x):
        return np.zeros_like(_arr(x))


# ---------------------------------------------------------------------------
# Call curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CallCurve:
    """Call prices for all strikes at one maturity, backed by an implied law."""

    law: ImpliedLaw
    family: str
    spot: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def k_max(self) -> float:
        return self.law.hi

    def _check(self, k):
        k = _arr(k)
        if np.any(k < 0) or np.any(k > self.k_max * (1 + 1e-12)):
            raise DomainError(f"strike outside curve domain [0, {self.k_max}]")
        return k

    def value(self, k):
        return self.law.call(self._check(k))

    def d1(self, k):
        """Right derivative -mu((K, inf))."""
        return -(1.0 - self.law.cdf(self._check(k)))

    def d1_left(self, k):
        """Left derivative -mu([K, inf))."""
        return -(1.0 - self.law.cdf_left(self._check(k)))

    def d2(self, k):
        return self.law.density(self._check(k))


def put_price(curve: CallCurve, k):
    """Put price from put-call parity P(K) = K - S0 + C(K)."""
    k = _arr(k)
    return k - curve.spot + curve.value(k)


def digital_price(curve: CallCurve, x, convention: str = "geq"):
    """Price of 1{S_T >= x} (``geq``) or 1{S_T > x} (``gt``)."""
    if convention == "geq":
        return -curve.d1_left(x)
    if convention == "gt":
        return -curve.d1(x)
    raise DomainError(f"unknown digital convention {convention!r}")


def implied_law(curve: CallCurve) -> ImpliedLaw:
    return curve.law


# ---------------------------------------------------------------------------
# Static portfolios
# ---------------------------------------------------------------------------

LEG_KINDS = ("call", "put", "cash", "digital_geq", "digital_gt", "forward")


@dataclass(frozen=True)
class Leg:
    """One static position; ``param`` is the strike (or level, or None for cash)."""

    kind: str
    param: float | None
    qty: float

    def __post_init__(self):
        if self.kind not in LEG_KINDS:
            raise DomainError(f"unknown leg kind {self.kind!r}")

    def payoff(self, s):
        s = _arr(s)
        k = self.param
        if self.kind == "call":
            return self.qty * np.maximum(s - k, 0.0)
        if self.kind == "put":
            return self.qty * np.maximum(k - s, 0.0)
        if self.kind == "cash":
            return self.qty * np.ones_like(s)
        if self.kind == "digital_geq":
            return self.qty * (s >= k).astype(float)
        if self.kind == "digital_gt":
            return self.qty * (s > k).astype(float)
        return self.qty * (s - k)  # forward entered at time zero

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param, "qty": self.qty}


@dataclass(frozen=True)
class StaticPortfolio:
    legs: tuple[Leg, ...] = ()

    @classmethod
    def of(cls, legs: Iterable[Leg]) -> "StaticPortfolio":
        return cls(tuple(legs))

    def payoff(self, s):
        s = _arr(s)
        total = np.zeros_like(s)
        for leg in self.legs:
            total = total + leg.payoff(s)
        return total


def price_leg(curve: CallCurve, leg: Leg) -> float:
    if leg.kind == "call":
        return leg.qty * float(curve.value(leg.param))
    if leg.kind == "put":
        return leg.qty * float(put_price(curve, leg.param))
    if leg.kind == "cash":
        return leg.qty
    if leg.kind == "digital_geq":
        return leg.qty * float(digital_price(curve, leg.param, "geq"))
    if leg.kind == "digital_gt":
        return leg.qty * float(digital_price(curve, leg.param, "gt"))
    # forwards have zero initial price; check the strike anyway
    if leg.param is not None:
        curve._check(leg.param)
    return 0.0


def price_static(curve: CallCurve, portfolio: StaticPortfolio | Iterable[Leg]) -> float:
    legs = portfolio.legs if isinstance(portfolio, StaticPortfolio) else tuple(portfolio)
    return float(sum(price_leg(curve, leg) for leg in legs))


# ---------------------------------------------------------------------------
# Quotes: diagnostics, ingestion, fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    index: int
    strike: float
    detail: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "index": self.index, "strike": self.strike, "detail": self.detail}


def check_no_arbitrage(strikes, prices, spot: float, tol: float = 1e-12) -> list[Violation]:
    """Report convexity, monotonicity and static-bound violations per strike.

    The zero-strike point (0, spot) is included implicitly when absent.
    """
    x = _arr(strikes)
    c = _arr(prices)
    out: list[Violation] = []
    for i, (k, p) in enumerate(zip(x, c)):
        if k < 0:
            out.append(Violation("negative_strike", i, float(k), "strike < 0"))
        if p < -tol:
            out.append(Violation("negative_price", i, float(k), "price < 0"))
        if p > spot + tol and k > 0:
            out.append(Violation("above_spot", i, float(k), f"price {p} exceeds spot {spot}"))
        if p < max(spot - k, 0.0) - tol * max(1.0, spot):
            out.append(Violation("below_intrinsic", i, float(k), f"price {p} below (S0-K)+"))
    order = np.argsort(x)
    xs, cs = x[order], c[order]
    if xs.size == 0 or xs[0] > 0:
        xs = np.concatenate([[0.0], xs])
        cs = np.concatenate([[spot], cs])
        idx = np.concatenate([[-1], order])
    else:
        idx = order
    if np.any(np.diff(xs) == 0):
        j = int(np.argmax(np.diff(xs) == 0)) + 1
        out.append(Violation("duplicate_strike", int(idx[j]), float(xs[j]), "repeated strike"))
        return out
    slopes = np.diff(cs) / np.diff(xs)
    scale = tol * max(1.0, spot)
    for j, s in enumerate(slopes):
        if s > scale:
            out.append(Violation("monotonicity", int(idx[j + 1]), float(xs[j + 1]), f"price increases (slope {s:.6g})"))
        if s < -1.0 - scale:
            out.append(Violation("slope_below_minus_one", int(idx[j + 1]), float(xs[j + 1]), f"slope {s:.6g} < -1"))
    for j in range(1, slopes.size):
        if slopes[j] < slopes[j - 1] - scale:
            out.append(Violation("convexity", int(idx[j]), float(xs[j]), "concave triple centred here"))
    return out


@dataclass(frozen=True)
class QuoteTable:
    strikes: np.ndarray
    prices: np.ndarray
    spot: float

    def __post_init__(self):
        object.__setattr__(self, "strikes", _arr(self.strikes))
        object.__setattr__(self, "prices", _arr(self.prices))


def load_quotes(path: str | Path, spot: float) -> QuoteTable:
    """Read quotes from CSV (header ``strike,price``) or a JSON array."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("["):
        rows = json.loads(text)
        pairs = [(float(r["strike"]), float(r["price"])) for r in rows]
    else:
        reader = csv.DictReader(text.splitlines())
        pairs = [(float(r["strike"]), float(r["price"])) for r in reader]
    if not pairs:
        raise DomainError(f"no quotes in {path}")
    k, p = zip(*sorted(pairs))
    return QuoteTable(np.array(k), np.array(p), float(spot))


def _hat_call_matrix(nodes: np.ndarray, strikes: np.ndarray) -> np.ndarray:
    """A[i, j] = integral of (u - strikes[i])+ against the hat function at node j."""
    y = nodes
    a = np.zeros((strikes.size, y.size))
    # two-point Gauss-Legendre is exact for the quadratic integrand on each piece
    gl = np.array([-1.0, 1.0]) / math.sqrt(3.0)
    for k in range(y.size - 1):
        y0, y1 = y[k], y[k + 1]
        lo = np.clip(strikes, y0, y1)
        half = (y1 - lo) / 2
        mid = (y1 + lo) / 2
        for g in gl:
            u = mid + half * g
            wt = half * (u - strikes)
            a[:, k] += wt * (y1 - u) / (y1 - y0)
            a[:, k + 1] += wt * (u - y0) / (y1 - y0)
    return a


def fit_call_curve(
    strikes,
    prices,
    spot: float,
    k_max: float | None = None,
    n_nodes: int = 240,
    smoothing: float = 1e-6,
) -> CallCurve:
    """Fit a C^2 convex call curve through quotes.

    The density is piecewise linear and non-negative (so the call curve is
    convex and twice differentiable); node values solve a bounded least
    squares problem that matches quotes, mass and mean tightly while
    penalising curvature of the density.
    """
    x = _arr(strikes)
    c = _arr(prices)
    if np.any(x < 0) or np.any(c < 0):
        raise DomainError("negative strikes or prices in quote table")
    bad = [v for v in check_no_arbitrage(x, c, spot) if v.kind != "duplicate_strike"]
    if bad:
        raise ArbitrageViolation("; ".join(f"{v.kind} at strike {v.strike}" for v in bad))
    order = np.argsort(x)
    x, c = x[order], c[order]
    keep = x > 0
    x, c = x[keep], c[keep]
    if x.size == 0:
        raise DomainError("need at least one positive-strike quote")
    if k_max is None:
        slope = (c[-1] - (c[-2] if x.size > 1 else spot)) / (x[-1] - (x[-2] if x.size > 1 else 0.0))
        excess = c[-1] / max(-slope, 1e-12)
        k_max = x[-1] + max(4.0 * excess, 0.5 * x[-1]) if c[-1] > 0 else x[-1]
    k_max = float(k_max)
    mesh = np.linspace(0.0, k_max, n_nodes)
    nodes = np.unique(np.concatenate([mesh, x[x < k_max]]))
    a_quote = _hat_call_matrix(nodes, x)
    h = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += h / 2
    w[1:] += h / 2
    v = np.zeros_like(nodes)
    v[:-1] += h * (2 * nodes[:-1] + nodes[1:]) / 6
    v[1:] += h * (nodes[:-1] + 2 * nodes[1:]) / 6
    n = nodes.size
    d2 = np.zeros((n - 2, n))
    for i in range(n - 2):
        d2[i, i : i + 3] = (1.0, -2.0, 1.0)
    scale = k_max / n
    rows = np.vstack([a_quote / spot, w[None, :], v[None, :] / spot, smoothing * d2 * scale])
    rhs = np.concatenate([c / spot, [1.0, 1.0], np.zeros(n - 2)])
    # pin the density to zero at the right end of the support
    bounds_hi = np.full(n, np.inf)
    bounds_hi[-1] = 1e-300
    sol = optimize.lsq_linear(rows, rhs, bounds=(np.zeros(n), bounds_hi), method="bvls", lsq_solver="exact")
    law = TabulatedLaw(nodes, np.maximum(sol.x, 0.0), spot)
    resid = float(np.max(np.abs(law.call(x) - c))) if x.size else 0.0
    return CallCurve(law, "grid-interpolated", float(spot), {"max_quote_residual": resid})


def build_call_curve(spec: dict | QuoteTable) -> CallCurve:
    """Build a curve from an analytic-family config or a quote table.

    Analytic configs look like ``{"family": "uniform", "params": {"a": 0,
    "b": 200}}`` or ``{"family": "lognormal", "params": {"sigma": 0.2},
    "S0": 100, "K_max": ...}``.  ``{"family": "heston", "params": {...}}``
    takes HestonParams field names.
    """
    if isinstance(spec, QuoteTable):
        return fit_call_curve(spec.strikes, spec.prices, spec.spot)
    family = str(spec.get("family", "")).lower()
    params = dict(spec.get("params", {}))
    if family in ("uniform", "analytic-uniform-terminal"):
        a = float(params.get("a", params.get("lo", 0.0)))
        b = float(params.get("b", params.get("hi", spec.get("K_max", 0.0))))
        law = UniformLaw(a, b)
        s0 = spec.get("S0")
        if s0 is not None and abs(float(s0) - law.spot) > 1e-9 * law.spot:
            raise DomainError(f"uniform law on [{a}, {b}] has mean {law.spot}, not S0={s0}")
        return CallCurve(law, "analytic-uniform-terminal", law.spot)
    if family in ("lognormal", "analytic-lognormal"):
        s0 = float(spec["S0"])
        sigma = float(params["sigma"]) * math.sqrt(float(params.get("T", 1.0)))
        law = LognormalLaw(s0, sigma, hi=spec.get("K_max"))
        return CallCurve(law, "analytic-lognormal", s0)
    if family in ("quotes", "grid", "grid-interpolated"):
        return fit_call_curve(params["strikes"], params["prices"], float(spec["S0"]), spec.get("K_max"))
    if family == "heston":
        from .hedging_sim.heston import HestonParams, heston_call_curve

        if "S0" in spec:
            params.setdefault("s0", float(spec["S0"]))
        return heston_call_curve(HestonParams(**params), spec.get("K_max"))
    raise DomainError(f"unknown curve family {family!r}")
