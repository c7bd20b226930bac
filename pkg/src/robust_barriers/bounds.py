"""Optimal model-free price bounds for the double touch digital.

``classify_upper`` / ``classify_lower`` evaluate the defining conditions of
all four cases independently, so exclusivity can be checked rather than
assumed; ``upper_bound`` / ``lower_bound`` assemble the optimal hedge and
cross-check its cost against coarse strike grids of every hedge family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .barycentre import (
    INF,
    BarrierPair,
    SubhedgeGeometry,
    gamma_minus,
    gamma_plus,
    kappa_and_range,
    rho_minus,
    rho_plus,
    w0_point,
    z0_point,
)
from .errors import ClassificationAmbiguous, DominanceFailed
from .hedges import (
    HedgeBlueprint,
    lh_coefficients,
    lh_threshold,
    make_subhedge,
    make_superhedge,
    static_cost,
    uh3_coefficients,
    uh4_coefficients,
    zero_hedge,
)
from .market_input import CallCurve, ImpliedLaw, digital_price, put_price
from .numerics import bracketed_root

CASES = ("I", "II", "III", "IV")


@dataclass
class Classification:
    side: str
    case: str
    params: dict
    conditions: dict  # case label -> bool, each evaluated independently

    @property
    def n_true(self) -> int:
        return sum(bool(v) for v in self.conditions.values())


@dataclass
class PriceBound:
    side: str
    case: str
    params: dict
    value: float
    blueprint: HedgeBlueprint
    diagnostics: dict = field(default_factory=dict)

    @property
    def strikes(self) -> dict:
        return self.blueprint.strikes

    def to_dict(self) -> dict:
        clean = {k: (v if not isinstance(v, float) or math.isfinite(v) else str(v)) for k, v in self.params.items()}
        return {
            "case": self.case,
            "value": self.value,
            "params": clean,
            "strikes": self.blueprint.to_dict()["strikes"],
            "blueprint": self.blueprint.to_dict(),
        }


def _s(x) -> float:
    return float(np.asarray(x, dtype=float).reshape(-1)[0])


# ---------------------------------------------------------------------------
# Upper bound
# ---------------------------------------------------------------------------


def _fixed_points(law: ImpliedLaw, bar: BarrierPair, n_scan: int = 41) -> list[float]:
    """All w in [0, lb] with gamma_-(gamma_+(w)) = w, by scan plus refinement."""
    tol = 1e-12 * law.hi

    def f(w):
        return gamma_minus(law, bar, gamma_plus(law, bar, w)) - w

    grid = np.linspace(0.0, bar.lb, n_scan)
    vals = f(grid)
    roots: list[float] = []
    if abs(vals[0]) <= 1e-9 * law.hi:
        roots.append(0.0)
    sign = np.sign(vals)
    lo, hi = [], []
    for i in range(n_scan - 1):
        if sign[i] == 0 and i > 0:
            roots.append(float(grid[i]))
        elif sign[i] * sign[i + 1] < 0:
            lo.append(grid[i])
            hi.append(grid[i + 1])
    if lo:
        refined = bracketed_root(f, np.array(lo), np.array(hi), xtol=tol)
        roots.extend(float(r) for r in refined)
    return sorted(set(roots))


def classify_upper(law: ImpliedLaw, bar: BarrierPair, strict: bool = True) -> Classification:
    bar.validate(law)
    lb, ub = bar.lb, bar.ub
    big_r = _s(rho_minus(law, lb, 0.0))
    small_r = _s(rho_plus(law, ub, INF))
    params: dict = {"rho_minus_0": big_r, "rho_plus_inf": small_r}
    cond: dict = {}

    # IV
    cond["IV"] = bool(ub < big_r and lb > small_r and _s(rho_plus(law, ub, big_r)) < _s(rho_minus(law, lb, small_r)))
    # I: gamma_- reaches 0 at some z0 > ub, and rho_-(0) <= ub
    z0 = z0_point(law, bar)
    cond["I"] = bool(math.isfinite(z0) and z0 > ub and big_r <= ub)
    # II: gamma_+ blows up at some w0 < lb, and rho_+(inf) >= lb
    w0_inf = w0_point(law, bar)
    cond["II"] = bool(math.isfinite(w0_inf) and w0_inf < lb and small_r >= lb)
    # III: fixed point of gamma_- o gamma_+ with rho_-(w0) <= rho_+(gamma_+(w0))
    fixed = []
    for w in _fixed_points(law, bar):
        g = _s(gamma_plus(law, bar, w))
        if not math.isfinite(g):
            continue
        k2 = _s(rho_plus(law, ub, g))
        k3 = _s(rho_minus(law, lb, w))
        if k3 <= k2 + 1e-9 * law.hi:
            fixed.append((w, g, k2, k3))
    cond["III"] = bool(fixed)

    true = [c for c in CASES if cond[c]]
    if len(true) != 1:
        if strict or not true:
            raise ClassificationAmbiguous(f"upper classification for {bar}: conditions {cond}")
    case = true[0]
    if case == "I":
        params.update({"z0": z0, "K": big_r})
    elif case == "II":
        params.update({"w0": w0_inf, "K": small_r})
    elif case == "III":
        w, g, k2, k3 = fixed[0]
        params.update({"w0": w, "K1": g, "K2": k2, "K3": k3, "K4": w})
    else:
        params.update({"K1": big_r, "K2": small_r})
    return Classification("upper", case, params, cond)


def upper_family_grid_min(curve: CallCurve, bar: BarrierPair, n: int = 50, n_iii: int = 10_000, seed: int = 0) -> dict:
    """Cheapest cost found on coarse strike grids for each superhedge family."""
    lb, ub, hi, s0 = bar.lb, bar.ub, curve.k_max, curve.spot
    out = {}
    k = np.linspace(lb, hi, n + 2)[1:-1]
    out["I"] = float(np.min(put_price(curve, k) / (k - lb)))
    k = np.linspace(0.0, ub, n + 2)[1:-1]
    out["II"] = float(np.min(curve.value(k) / (ub - k)))
    k1 = np.linspace(ub, hi, n + 2)[1:-1][:, None]
    k2 = np.linspace(0.0, lb, n + 2)[1:-1][None, :]
    c = uh4_coefficients(lb, ub, s0, k1, k2)
    cost = c["alpha1"] * curve.value(k1) + c["alpha2"] * put_price(curve, k2) + c["alpha4"]
    out["IV"] = float(np.min(cost))
    rng = np.random.default_rng(seed)
    k1 = rng.uniform(ub, hi, n_iii)
    k4 = rng.uniform(0.0, lb, n_iii)
    mid = np.sort(rng.uniform(lb, ub, (n_iii, 2)), axis=1)
    k3, k2 = mid[:, 0], mid[:, 1]
    c = uh3_coefficients(lb, ub, k1, k2, k3, k4)
    cost = (c["alpha1"] * curve.value(k1) + c["alpha2"] * curve.value(k2)
            + c["alpha3"] * put_price(curve, k3) + c["alpha4"] * put_price(curve, k4))
    ok = np.isfinite(cost) & (c["alpha1"] >= 0) & (c["alpha3"] >= 0)
    out["III"] = float(np.min(cost[ok])) if ok.any() else math.inf
    return out


def upper_bound(curve: CallCurve, bar: BarrierPair, check: bool = True, strict: bool = True) -> PriceBound:
    law = curve.law
    cl = classify_upper(law, bar, strict=strict)
    p = cl.params
    if cl.case == "I":
        bp = make_superhedge("I", bar, p["K"])
    elif cl.case == "II":
        bp = make_superhedge("II", bar, p["K"])
    elif cl.case == "III":
        bp = make_superhedge("III", bar, (p["K1"], p["K2"], p["K3"], p["K4"]))
    else:
        bp = make_superhedge("IV", bar, (p["K1"], p["K2"]), curve.spot)
    value = static_cost(bp, curve)
    diag = {"conditions": cl.conditions}
    if check:
        grid = upper_family_grid_min(curve, bar)
        diag["grid_min"] = grid
        best = min(grid.values())
        if value > best + 1e-6:
            raise DominanceFailed(f"upper bound {value:.8f} exceeds a grid superhedge cost {best:.8f} ({grid})")
    return PriceBound("upper", cl.case, p, value, bp, diag)


# ---------------------------------------------------------------------------
# Lower bound
# ---------------------------------------------------------------------------


def classify_lower(law: ImpliedLaw, bar: BarrierPair, geometry: SubhedgeGeometry | None = None,
                   strict: bool = True) -> Classification:
    geo = geometry or kappa_and_range(law, bar)
    params: dict = {
        "v_lo": geo.v_lo, "v_hi": geo.v_hi,
        "psi_domain": list(geo.psi_domain), "theta_domain": list(geo.theta_domain),
    }
    cond = {"IV": bool(geo.empty)}
    if geo.empty:
        cond.update({"I": False, "II": False, "III": False})
        return Classification("lower", "IV", params, cond)
    g_lo = _s(geo.kappa(geo.v_lo)) - geo.v_lo
    g_hi = _s(geo.kappa(geo.v_hi)) - geo.v_hi
    cond["II"] = bool(g_hi > 0)
    cond["III"] = bool(g_lo < 0)
    cond["I"] = bool(g_lo >= 0 >= g_hi)
    true = [c for c in CASES if cond[c]]
    if len(true) != 1 and strict:
        raise ClassificationAmbiguous(f"lower classification for {bar}: conditions {cond}")
    case = true[0]
    if case == "I":
        if g_lo == 0:
            v0 = geo.v_lo
        elif g_hi == 0:
            v0 = geo.v_hi
        else:
            v0 = _s(bracketed_root(lambda v: geo.kappa(v) - v, np.array([geo.v_lo]), np.array([geo.v_hi]),
                                   xtol=1e-13 * law.hi))
    elif case == "II":
        v0 = geo.v_hi
    else:
        v0 = geo.v_lo
    params.update({"v0": v0, "K1": _s(geo.theta(v0)), "K2": _s(geo.psi(v0)), "K3": v0,
                   "kappa_v0": _s(geo.kappa(v0))})
    return Classification("lower", case, params, cond)


def _lh_cost(curve: CallCurve, bar: BarrierPair, c: dict, k1, k2, k3, weak: bool = False):
    lb, ub = bar.lb, bar.ub
    d_lb = digital_price(curve, lb, "geq" if weak else "gt")
    d_ub = digital_price(curve, ub, "gt" if weak else "geq")
    return (c["alpha0"] - c["alpha2"] * curve.value(k2)
            + c["alpha3"] * (curve.value(lb) - curve.value(k3) + curve.value(ub))
            - (c["alpha3"] - c["alpha2"]) * curve.value(k1) - c["gamma1"] * d_lb + c["gamma2"] * d_ub)


def lower_family_grid_max(curve: CallCurve, bar: BarrierPair, n: int = 50, n3: int = 20) -> dict:
    lb, ub, hi, s0 = bar.lb, bar.ub, curve.k_max, curve.spot
    out = {"zero": 0.0}
    k1 = np.linspace(ub, hi, n + 2)[1:-1][:, None]
    k2 = np.linspace(0.0, lb, n + 2)[1:-1][None, :]
    c = lh_coefficients("I", lb, ub, s0, k1, k2)
    out["I"] = float(np.max(_lh_cost(curve, bar, c, k1, k2, c["K3"])))
    k1 = np.linspace(ub, hi, n3 + 2)[1:-1][:, None, None]
    k2 = np.linspace(0.0, lb, n3 + 2)[1:-1][None, :, None]
    frac = np.linspace(0.0, 1.0, n3 + 2)[1:-1][None, None, :]
    thr = lh_threshold(lb, ub, k1, k2)
    k3 = lb + (thr - lb) * frac
    c = lh_coefficients("II", lb, ub, s0, k1, k2, k3)
    out["II"] = float(np.max(_lh_cost(curve, bar, c, k1, k2, k3)))
    k3 = thr + (ub - thr) * frac
    c = lh_coefficients("III", lb, ub, s0, k1, k2, k3)
    out["III"] = float(np.max(_lh_cost(curve, bar, c, k1, k2, k3)))
    return out


def lower_bound(curve: CallCurve, bar: BarrierPair, check: bool = True, strict: bool = True,
                geometry: SubhedgeGeometry | None = None) -> PriceBound:
    law = curve.law
    cl = classify_lower(law, bar, geometry, strict=strict)
    p = cl.params
    if cl.case == "IV":
        bp = zero_hedge(bar)
        value = 0.0
    else:
        if cl.case == "I":
            bp = make_subhedge("I", bar, curve.spot, (p["K1"], p["K2"]))
        else:
            bp = make_subhedge(cl.case, bar, curve.spot, (p["K1"], p["K2"], p["K3"]), threshold_tol=1e-7)
        value = static_cost(bp, curve)
    diag = {"conditions": cl.conditions}
    if check:
        grid = lower_family_grid_max(curve, bar)
        diag["grid_max"] = grid
        best = max(grid.values())
        if value < best - 1e-6:
            raise DominanceFailed(f"lower bound {value:.8f} below a grid subhedge cost {best:.8f} ({grid})")
    return PriceBound("lower", cl.case, p, value, bp, diag)


def compute_bounds(curve: CallCurve, bar: BarrierPair, check: bool = True, strict: bool = True) -> dict:
    up = upper_bound(curve, bar, check=check, strict=strict)
    lo = lower_bound(curve, bar, check=check, strict=strict)
    if lo.value > up.value + 1e-9:
        raise ClassificationAmbiguous(f"lower bound {lo.value} exceeds upper bound {up.value}")
    return {"upper": up, "lower": lo}
