"""Hedge execution on simulated Heston paths, utility comparison and hedge-type maps.

Hedging errors follow the seller's convention: for a short position the
error is premium received minus the double-touch payout plus the hedge's
gains, net of transaction costs.  A long position flips the sign of
everything except the costs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ..barycentre import BarrierPair
from ..bounds import classify_lower, classify_upper
from ..errors import ClassificationAmbiguous, DomainError, RobustBarrierError
from ..hedges import FIRST_LB, FIRST_NONE, FIRST_UB, HedgeBlueprint, PathOutcome, double_touch_indicator, \
    evaluate_payoff, static_cost
from ..market_input import CallCurve, digital_price, put_price
from .fd import DoubleTouchGrid, build_double_touch_grid, one_touch_down, one_touch_up
from .heston import HestonPaths, atm_implied_vol, bs_call, bs_call_delta_vega, expected_variance, \
    heston_call_conditional

MONITORING = ("daily", "exact")
POSITIONS = {"short": 1.0, "long": -1.0}


@dataclass(frozen=True)
class CostSpec:
    underlying: float = 0.005
    option: float = 0.01

    def __post_init__(self):
        if self.underlying < 0 or self.option < 0:
            raise DomainError("transaction cost rates must be non-negative")

    def scaled(self, factor: float) -> "CostSpec":
        return CostSpec(self.underlying * factor, self.option * factor)


@dataclass
class Ledger:
    """Per-path hedging errors of one strategy.

    ``errors`` are raw terminal P&L; ``costs`` the transaction costs already
    deducted from them.  Utilities are computed on the mean-adjusted errors.
    """

    label: str
    errors: np.ndarray
    costs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=float)
        self.costs = np.broadcast_to(np.asarray(self.costs, dtype=float), self.errors.shape).copy()

    @property
    def n(self) -> int:
        return self.errors.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def adjusted(self) -> np.ndarray:
        return self.errors - self.errors.mean()

    def utility(self, adjusted: bool = True) -> float:
        h = self.adjusted if adjusted else self.errors
        return float(np.mean(-np.expm1(-h)))

    def cdf(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.sort(self.adjusted)
        return x, np.arange(1, x.size + 1) / x.size

    def summary(self) -> dict:
        adj = self.adjusted
        return {
            "label": self.label,
            "n_paths": self.n,
            "mean_error": self.mean,
            "std_error": float(adj.std(ddof=1)) if self.n > 1 else 0.0,
            "mean_cost": float(self.costs.mean()),
            "q01": float(np.quantile(adj, 0.01)),
            "min": float(adj.min()),
            "utility": self.utility(),
            **{k: v for k, v in self.meta.items() if isinstance(v, (int, float, str, bool))},
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "error", "adjusted_error", "cost"])
            for i, (e, a, c) in enumerate(zip(self.errors, self.adjusted, self.costs)):
                w.writerow([i, repr(float(e)), repr(float(a)), repr(float(c))])


# ---------------------------------------------------------------------------
# Path reduction
# ---------------------------------------------------------------------------


def _first_index(mask: np.ndarray) -> np.ndarray:
    hit = mask.any(axis=1)
    return np.where(hit, mask.argmax(axis=1), -1)


def path_outcome(paths: HestonPaths, barriers: BarrierPair, monitoring: str = "daily") -> PathOutcome:
    """Reduce paths to hit flags, order and fill prices.

    Daily monitoring observes closes only and fills triggers at the close
    that first breached the barrier.  Exact monitoring uses the first fine
    sub-grid crossing and fills at the barrier level itself.
    """
    lb, ub = barriers.lb, barriers.ub
    if monitoring == "daily":
        s = paths.s
        i_lb = _first_index(s <= lb)
        i_ub = _first_index(s >= ub)
        rows = np.arange(s.shape[0])
        fill_lb = np.where(i_lb >= 0, s[rows, np.maximum(i_lb, 0)], lb)
        fill_ub = np.where(i_ub >= 0, s[rows, np.maximum(i_ub, 0)], ub)
        scale = 1
    elif monitoring == "exact":
        cross = paths.crossings or {}
        if lb not in cross or ub not in cross:
            raise DomainError("exact monitoring needs paths simulated with levels=(lb, ub)")
        i_lb, i_ub = cross[lb], cross[ub]
        fill_lb = np.full(i_lb.shape, lb)
        fill_ub = np.full(i_ub.shape, ub)
        scale = paths.params.substeps
    else:
        raise DomainError(f"monitoring must be one of {MONITORING}, got {monitoring!r}")
    hit_lb, hit_ub = i_lb >= 0, i_ub >= 0
    big = np.iinfo(np.int64).max
    a = np.where(hit_lb, i_lb, big)
    b = np.where(hit_ub, i_ub, big)
    first = np.where(a < b, FIRST_LB, np.where(b < a, FIRST_UB, FIRST_NONE))
    times = {"lb": np.where(hit_lb, i_lb / scale, np.nan), "ub": np.where(hit_ub, i_ub / scale, np.nan)}
    return PathOutcome(paths.terminal, hit_lb, hit_ub, first, fill_lb, fill_ub, times)


def fair_value(paths: HestonPaths, barriers: BarrierPair, monitoring: str = "daily") -> tuple[float, float]:
    """Monte Carlo double-touch price and its standard error."""
    ind = double_touch_indicator(path_outcome(paths, barriers, monitoring))
    return float(ind.mean()), float(ind.std(ddof=1) / math.sqrt(ind.size))


# ---------------------------------------------------------------------------
# Quasi-static hedges
# ---------------------------------------------------------------------------


def _unit_price(curve: CallCurve, kind: str, k: float) -> float:
    if kind == "call":
        return float(curve.value(k))
    if kind == "put":
        return float(put_price(curve, k))
    if kind == "digital_geq":
        return float(digital_price(curve, k, "geq"))
    if kind == "digital_gt":
        return float(digital_price(curve, k, "gt"))
    return 0.0


def inception_cost(blueprint: HedgeBlueprint, curve: CallCurve, costs: CostSpec) -> float:
    """Transaction cost of setting up the static part of a hedge."""
    total = 0.0
    for leg in blueprint.static.legs:
        if leg.kind == "cash":
            continue
        if leg.kind == "forward":
            total += costs.underlying * abs(leg.qty) * curve.spot
        else:
            total += costs.option * abs(leg.qty) * _unit_price(curve, leg.kind, leg.param)
    return total


def trigger_cost(blueprint: HedgeBlueprint, outcome: PathOutcome, costs: CostSpec) -> np.ndarray:
    total = np.zeros(outcome.terminal.shape)
    for t in blueprint.triggers:
        fill = np.broadcast_to(blueprint._fill(t.strike, outcome), total.shape)
        total = total + np.where(outcome.event(t.event), costs.underlying * abs(t.qty) * fill, 0.0)
    return total


def run_quasi_static(blueprint: HedgeBlueprint, paths: HestonPaths, curve: CallCurve, costs: CostSpec | None = None,
                     monitoring: str = "daily", position: str = "short", premium: float | None = None,
                     label: str | None = None) -> Ledger:
    """Hold the static legs to maturity and open forwards when barriers are reached.

    The hedge is bought (short position) or sold (long position) at its
    price on ``curve``; the option changes hands at ``premium``, by default
    the Monte Carlo fair value on these paths.
    """
    costs = costs or CostSpec()
    sign = POSITIONS[position]
    outcome = path_outcome(paths, blueprint.barriers, monitoring)
    ind = double_touch_indicator(outcome)
    if premium is None:
        premium = float(ind.mean())
    hedge_price = static_cost(blueprint, curve)
    payoff = evaluate_payoff(blueprint, outcome)
    tc = inception_cost(blueprint, curve, costs) + trigger_cost(blueprint, outcome, costs)
    errors = sign * (premium - ind + payoff - hedge_price) - tc
    meta = {"premium": premium, "hedge_cost": hedge_price, "monitoring": monitoring, "position": position,
            "hedge": f"{blueprint.side}:{blueprint.variant}"}
    return Ledger(label or f"{position} {blueprint.side}hedge", errors, tc, meta)


# ---------------------------------------------------------------------------
# Delta/vega benchmark
# ---------------------------------------------------------------------------


@dataclass
class DeltaVegaConfig:
    """Benchmark settings.  ``grid`` and ``sigma_atm`` are computed when absent.

    ``vol="atm"`` hedges at the constant time-zero at-the-money implied vol;
    ``"rolling"`` re-implies it daily from the current variance (an oracle
    the Black-Scholes hedger would not have).  ``vanilla_marks="heston"``
    trades the vanilla at its model price; ``"bs"`` at the hedger's vol.
    """

    grid: DoubleTouchGrid | None = None
    sigma_atm: float | None = None
    vanilla_strike: float | None = None
    q_cap: float = 0.25
    vega_floor: float = 0.1  # vanilla vega below this fraction of an at-the-money vega disables the vega leg
    vol: str = "atm"
    vanilla_marks: str = "heston"
    otm_costs: bool = True  # vanilla trades are charged on the out-of-the-money side (put-call parity)
    monitoring: str = "daily"

    def __post_init__(self):
        if self.vol not in ("atm", "rolling") or self.vanilla_marks not in ("heston", "bs"):
            raise DomainError(f"unknown delta/vega mode vol={self.vol!r}, marks={self.vanilla_marks!r}")
        if self.monitoring not in MONITORING:
            raise DomainError(f"monitoring must be one of {MONITORING}")
        if self.q_cap < 0 or self.vega_floor < 0:
            raise DomainError("q_cap and vega_floor must be non-negative")


def _knocked_value(s, tau, sigma, hit_lb, hit_ub, lb, ub):
    """Value of the remaining claim once one barrier has been touched."""
    up = one_touch_up(s, ub, tau, sigma)
    dn = one_touch_down(s, lb, tau, sigma)
    return np.where(hit_lb & hit_ub, 1.0, np.where(hit_lb, up, np.where(hit_ub, dn, np.nan)))


def _option_greeks(grid: DoubleTouchGrid, day: int, s, tau, sigma, hit_lb, hit_ub):
    lb, ub = grid.lb, grid.ub
    live = ~(hit_lb | hit_ub)
    value = np.empty_like(s)
    delta = np.zeros_like(s)
    vega = np.zeros_like(s)
    if live.any():
        value[live] = grid.price(day, s[live], sigma[live])
        delta[live] = grid.delta(day, s[live], sigma[live])
        vega[live] = grid.vega(day, s[live], sigma[live])
    k = ~live
    if k.any():
        sk, sg, hl, hu = s[k], sigma[k], hit_lb[k], hit_ub[k]
        value[k] = _knocked_value(sk, tau, sg, hl, hu, lb, ub)
        h = 1e-4 * sk
        delta[k] = (_knocked_value(sk + h, tau, sg, hl, hu, lb, ub)
                    - _knocked_value(sk - h, tau, sg, hl, hu, lb, ub)) / (2 * h)
        e = 1e-3
        vega[k] = (_knocked_value(sk, tau, sg + e, hl, hu, lb, ub)
                   - _knocked_value(sk, tau, np.maximum(sg - e, 1e-6), hl, hu, lb, ub)) / (sg + e - np.maximum(sg - e, 1e-6))
    return value, delta, vega


def _knock_states(paths: HestonPaths, barriers: BarrierPair, monitoring: str):
    """Boolean (n_paths, n_steps + 1) arrays: barrier touched by the end of each day."""
    lb, ub = barriers.lb, barriers.ub
    if monitoring == "daily":
        return np.logical_or.accumulate(paths.s <= lb, axis=1), np.logical_or.accumulate(paths.s >= ub, axis=1)
    cross = paths.crossings or {}
    if lb not in cross or ub not in cross:
        raise DomainError("exact monitoring needs paths simulated with levels=(lb, ub)")
    day_end = np.arange(paths.s.shape[1]) * paths.params.substeps
    kl = (cross[lb][:, None] >= 0) & (cross[lb][:, None] <= day_end[None, :])
    ku = (cross[ub][:, None] >= 0) & (cross[ub][:, None] <= day_end[None, :])
    return kl, ku


def run_delta_vega(paths: HestonPaths, barriers: BarrierPair, costs: CostSpec | None = None,
                   config: DeltaVegaConfig | None = None, position: str = "short", premium: float | None = None,
                   label: str | None = None) -> Ledger:
    """Daily delta hedge plus a vega hedge in the at-the-money vanilla.

    Greeks of the double touch come from the Black-Scholes grid (untouched
    state) or closed-form one-touch values (one barrier touched), at the
    hedger's volatility.  The vanilla quantity is option vega over vanilla
    vega, capped at ``q_cap`` and dropped when the vanilla has too little
    vega to hedge with; the underlying position offsets the vanilla's delta.
    Once both barriers are touched the claim is worth one and every position
    is closed.
    """
    costs = costs or CostSpec()
    config = config or DeltaVegaConfig()
    sign = POSITIONS[position]
    p = paths.params
    n_steps = p.n_steps
    sig_atm = config.sigma_atm if config.sigma_atm is not None else atm_implied_vol(p)
    grid = config.grid
    if grid is None:
        grid = build_double_touch_grid(barriers.lb, barriers.ub, p.T, n_steps)
    if grid.values.shape[1] != n_steps + 1:
        raise DomainError("double-touch grid must have one time slice per simulated day")
    k_van = config.vanilla_strike if config.vanilla_strike is not None else p.s0
    scale = sig_atm**2 / float(expected_variance(p, p.v0, p.T))
    knocked_lb, knocked_ub = _knock_states(paths, barriers, config.monitoring)

    n = paths.n_paths
    a_prev = np.zeros(n)
    q_prev = np.zeros(n)
    gains = np.zeros(n)
    tc = np.zeros(n)
    c_prev = None
    s_prev = None
    day_tau = p.T / n_steps
    for d in range(n_steps):
        tau = p.T - paths.times[d]
        s = paths.s[:, d]
        if config.vol == "atm":
            sigma = np.full(n, sig_atm)
        else:
            sigma = np.sqrt(scale * expected_variance(p, paths.v[:, d], tau))
        hl, hu = knocked_lb[:, d], knocked_ub[:, d]
        _, dv, nv = _option_greeks(grid, d, s, tau, sigma, hl, hu)
        if config.vanilla_marks == "heston":
            c = heston_call_conditional(p, s, paths.v[:, d], k_van, tau)
        else:
            c = bs_call(s, k_van, tau, sigma)
        dc, nc = bs_call_delta_vega(s, k_van, tau, sigma)
        if d > 0:
            gains += a_prev * (s - s_prev) + q_prev * (c - c_prev)
        atm_vega = s * math.sqrt(tau / (2 * math.pi))
        usable = (nc > config.vega_floor * atm_vega) & (tau > 0.5 * day_tau)
        q = np.where(usable, np.clip(nv / np.where(usable, nc, 1.0), -config.q_cap, config.q_cap), 0.0)
        a = dv - q * dc
        done = hl & hu
        a = np.where(done, 0.0, a)
        q = np.where(done, 0.0, q)
        unit = np.minimum(c, c - s + k_van) if config.otm_costs else c
        tc += costs.underlying * np.abs(a - a_prev) * s + costs.option * np.abs(q - q_prev) * unit
        a_prev, q_prev, c_prev, s_prev = a, q, c, s
    s_t = paths.terminal
    gains += a_prev * (s_t - s_prev) + q_prev * (np.maximum(s_t - k_van, 0.0) - c_prev)

    if config.monitoring == "daily":
        ind = (knocked_lb[:, -1] & knocked_ub[:, -1]).astype(float)
    else:
        ind = double_touch_indicator(path_outcome(paths, barriers, "exact"))
    if premium is None:
        premium = float(ind.mean())
    errors = sign * (premium - ind + gains) - tc
    meta = {"premium": premium, "sigma_atm": sig_atm, "monitoring": config.monitoring, "position": position,
            "hedge": "deltavega"}
    return Ledger(label or f"{position} delta/vega", errors, tc, meta)


# ---------------------------------------------------------------------------
# Utility comparison
# ---------------------------------------------------------------------------


@dataclass
class UtilityRow:
    label: str
    utility: float
    ci_low: float
    ci_high: float
    mean_error: float
    n_paths: int
    preferred: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _bootstrap_indices(rng: np.random.Generator, n: int, n_boot: int, chunk: int = 100):
    for start in range(0, n_boot, chunk):
        yield rng.integers(0, n, size=(min(chunk, n_boot - start), n))


def _boot_utilities(errors: np.ndarray, idx: np.ndarray) -> np.ndarray:
    sample = errors[idx]
    adj = sample - sample.mean(axis=1, keepdims=True)
    return np.mean(-np.expm1(-adj), axis=1)


def utility_report(ledgers, n_boot: int = 1000, seed: int = 0, level: float = 0.9) -> list[UtilityRow]:
    """E[1 - exp(-H)] of the mean-adjusted errors with percentile bootstrap intervals.

    Each resample re-centres the errors, so the interval reflects the
    mean adjustment as well.  The ledger with the highest utility is flagged.
    """
    rows = []
    alpha = (1 - level) / 2
    for i, led in enumerate(ledgers):
        rng = np.random.default_rng([seed, i])
        boots = np.concatenate([_boot_utilities(led.errors, idx) for idx in _bootstrap_indices(rng, led.n, n_boot)])
        lo, hi = np.quantile(boots, [alpha, 1 - alpha])
        rows.append(UtilityRow(led.label, led.utility(), float(lo), float(hi), led.mean, led.n))
    finite = [r for r in rows if math.isfinite(r.utility)]
    if finite:
        max(finite, key=lambda r: r.utility).preferred = True
    return rows


def compare_utilities(a: Ledger, b: Ledger, n_boot: int = 1000, seed: int = 0, level: float = 0.9) -> dict:
    """Paired bootstrap of U(a) - U(b); ledgers must come from the same paths."""
    if a.n != b.n:
        raise DomainError("paired comparison needs ledgers on the same paths")
    rng = np.random.default_rng(seed)
    diffs = []
    for idx in _bootstrap_indices(rng, a.n, n_boot):
        diffs.append(_boot_utilities(a.errors, idx) - _boot_utilities(b.errors, idx))
    diffs = np.concatenate(diffs)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(diffs, [alpha, 1 - alpha])
    return {
        "a": a.label, "b": b.label, "difference": a.utility() - b.utility(),
        "ci_low": float(lo), "ci_high": float(hi), "level": level,
        "a_preferred": bool(lo > 0), "b_preferred": bool(hi < 0),
    }


# ---------------------------------------------------------------------------
# Hedge-type maps
# ---------------------------------------------------------------------------


@dataclass
class TypeMap:
    lbs: np.ndarray
    ubs: np.ndarray
    upper: np.ndarray  # (len(lbs), len(ubs)) case labels, "" where the pair is invalid
    lower: np.ndarray

    def labels(self, side: str) -> set[str]:
        grid = self.upper if side == "upper" else self.lower
        return {str(x) for x in grid.ravel() if x}

    def rows(self):
        for i, lb in enumerate(self.lbs):
            for j, ub in enumerate(self.ubs):
                if self.upper[i, j] or self.lower[i, j]:
                    yield float(lb), float(ub), str(self.upper[i, j]), str(self.lower[i, j])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lb", "ub", "upper_case", "lower_case"])
            for r in self.rows():
                w.writerow(r)


def type_map(curve: CallCurve, lbs, ubs, strict: bool = True, quotes=None, on_error: str = "raise") -> TypeMap:
    """Upper and lower case labels over a barrier grid.

    With ``quotes`` (a QuoteSet) the labels come from the finite-strike
    bounds instead of the continuum classification.  ``on_error="mark"``
    records "?" instead of raising when a classification is ambiguous.
    """
    lbs = np.asarray(lbs, dtype=float)
    ubs = np.asarray(ubs, dtype=float)
    up = np.full((lbs.size, ubs.size), "", dtype=object)
    lo = np.full((lbs.size, ubs.size), "", dtype=object)
    s0 = curve.spot
    for i, lb in enumerate(lbs):
        for j, ub in enumerate(ubs):
            if not (0 < lb < s0 < ub):
                continue
            bar = BarrierPair(float(lb), float(ub))
            try:
                if quotes is not None:
                    from ..finite_strikes import finite_bounds

                    res = finite_bounds(quotes, bar)
                    up[i, j], lo[i, j] = res["upper"].case, res["lower"].case
                else:
                    up[i, j] = classify_upper(curve.law, bar, strict=strict).case
                    lo[i, j] = classify_lower(curve.law, bar, strict=strict).case
            except (ClassificationAmbiguous, RobustBarrierError):
                if on_error == "raise":
                    raise
                up[i, j] = up[i, j] or "?"
                lo[i, j] = lo[i, j] or "?"
    return TypeMap(lbs, ubs, up, lo)
