"""Barycentre of the implied law and the strike-selection functions built on it.

Conventions: ``+inf`` and ``-inf`` (``math.inf``) stand for the empty-set
conventions of the definitions (``inf{} = +inf``, ``sup{} = -inf``) and for
"no root below K_max".  ``z = inf`` as an argument of ``rho_plus`` means the
top of the support.  All functions are vectorised over their last argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ZeroMass
from .market_input import ImpliedLaw
from .numerics import bracketed_root

INF = math.inf


@dataclass(frozen=True)
class BarrierPair:
    lb: float
    ub: float

    def validate(self, law: ImpliedLaw) -> "BarrierPair":
        s0 = law.mean()
        if not (0.0 < self.lb < s0 < self.ub < law.hi):
            raise DomainError(
                f"barriers must satisfy 0 < lb < S0 < ub < K_max; got lb={self.lb}, ub={self.ub}, "
                f"S0={s0:.6g}, K_max={law.hi:.6g}"
            )
        return self


class IntervalUnion:
    """Finite union of intervals, normalised to sorted disjoint pieces."""

    def __init__(self, intervals: Sequence[tuple[float, float]]):
        pieces = sorted((float(a), float(b)) for a, b in intervals if b > a)
        merged: list[tuple[float, float]] = []
        for a, b in pieces:
            if merged and a <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], b))
            else:
                merged.append((a, b))
        self.intervals = tuple(merged)

    def __iter__(self):
        return iter(self.intervals)

    def __repr__(self) -> str:
        return "IntervalUnion(" + ", ".join(f"({a:.6g}, {b:.6g})" for a, b in self.intervals) + ")"

    def mass(self, law: ImpliedLaw) -> float:
        return float(sum(law.mass(a, b) for a, b in self.intervals))

    def moment(self, law: ImpliedLaw) -> float:
        return float(sum(law.partial_moment(a, b) for a, b in self.intervals))


def barycentre(law: ImpliedLaw, gamma: IntervalUnion | Sequence[tuple[float, float]]) -> float:
    """mu-mean of a union of intervals."""
    if not isinstance(gamma, IntervalUnion):
        gamma = IntervalUnion(gamma)
    m = gamma.mass(law)
    if m <= 0:
        raise ZeroMass(f"set {gamma} carries no mass")
    return gamma.moment(law) / m


def _xtol(law: ImpliedLaw) -> float:
    return 1e-13 * law.hi


def _centred(law: ImpliedLaw, level: float, a, b):
    """Integral of (u - level) over (a, b]."""
    return law.partial_moment(a, b) - level * law.mass(a, b)


# ---------------------------------------------------------------------------
# rho and gamma
# ---------------------------------------------------------------------------


def rho_minus(law: ImpliedLaw, lb: float, w):
    """r > lb with barycentre of [w, r] equal to lb (w <= lb)."""
    w = np.minimum(np.asarray(w, dtype=float), lb)
    out = bracketed_root(lambda r: _centred(law, lb, w, r), np.full_like(w, lb), np.full_like(w, law.hi), _xtol(law))
    return out


def rho_plus(law: ImpliedLaw, ub: float, z):
    """r < ub with barycentre of [r, z] equal to ub (z >= ub, inf allowed)."""
    z = np.minimum(np.maximum(np.asarray(z, dtype=float), ub), law.hi)
    return bracketed_root(lambda r: _centred(law, ub, r, z), np.zeros_like(z), np.full_like(z, ub), _xtol(law))


def _gamma_plus_residual(law: ImpliedLaw, bar: BarrierPair, w, z):
    r = rho_plus(law, bar.ub, z)
    first = _centred(law, bar.lb, 0.0, w)
    second = np.where(r < w, _centred(law, bar.lb, w, z), _centred(law, bar.lb, r, z))
    return first + second


def gamma_plus(law: ImpliedLaw, bar: BarrierPair, w):
    """z >= ub with barycentre of [0, w] u [rho_+(z), z] equal to lb; +inf if none."""
    w = np.clip(np.asarray(w, dtype=float), 0.0, bar.lb)
    top = _gamma_plus_residual(law, bar, w, np.full_like(w, law.hi))
    finite = top >= 0
    wf = np.where(finite, w, 0.0)
    root = bracketed_root(
        lambda z: _gamma_plus_residual(law, bar, wf, z), np.full_like(w, bar.ub), np.full_like(w, law.hi), _xtol(law)
    )
    return np.where(finite, root, INF)


def _gamma_minus_residual(law: ImpliedLaw, bar: BarrierPair, w, z):
    r = rho_minus(law, bar.lb, w)
    joined = _centred(law, bar.ub, w, law.hi)
    split = _centred(law, bar.ub, w, r) + _centred(law, bar.ub, z, law.hi)
    return np.where(r > z, joined, split)


def gamma_minus(law: ImpliedLaw, bar: BarrierPair, z):
    """w <= lb with barycentre of [w, rho_-(w)] u [z, inf) equal to ub; -inf if none."""
    z = np.clip(np.asarray(z, dtype=float), bar.ub, law.hi)
    bottom = _gamma_minus_residual(law, bar, np.zeros_like(z), z)
    finite = bottom <= 0
    zf = np.where(finite, z, law.hi)
    root = bracketed_root(
        lambda w: _gamma_minus_residual(law, bar, w, zf), np.zeros_like(z), np.full_like(z, bar.lb), _xtol(law)
    )
    return np.where(finite, root, -INF)


def z0_point(law: ImpliedLaw, bar: BarrierPair) -> float:
    """z0 > ub where gamma_- reaches 0, or nan when gamma_-(ub) is already >= 0."""
    f = lambda z: _gamma_minus_residual(law, bar, np.zeros_like(z), z)
    if float(f(np.array([bar.ub]))[0]) <= 0:
        return math.nan
    return float(bracketed_root(f, np.array([bar.ub]), np.array([law.hi]), _xtol(law))[0])


def w0_point(law: ImpliedLaw, bar: BarrierPair) -> float:
    """w0 < lb where gamma_+ blows up, or nan when gamma_+(lb) is finite."""
    f = lambda w: _gamma_plus_residual(law, bar, w, np.full_like(w, law.hi))
    if float(f(np.array([bar.lb]))[0]) >= 0:
        return math.nan
    return float(bracketed_root(f, np.array([0.0]), np.array([bar.lb]), _xtol(law))[0])


# ---------------------------------------------------------------------------
# psi, theta, kappa
# ---------------------------------------------------------------------------


def _caps(law: ImpliedLaw, bar: BarrierPair) -> tuple[float, float]:
    s0 = law.mean()
    width = bar.ub - bar.lb
    return (bar.ub - s0) / width, (s0 - bar.lb) / width


def psi(law: ImpliedLaw, bar: BarrierPair, v, mass_tol: float = 1e-12):
    """Lower cut point z in [0, lb] for the embedding from lb; +inf when infeasible."""
    v = np.clip(np.asarray(v, dtype=float), bar.lb, bar.ub)
    s0 = law.mean()
    cap_u, _ = _caps(law, bar)
    target = bar.ub - s0
    upper_part = -_centred(law, bar.ub, v, bar.ub)  # integral of (ub - u) over (v, ub)

    def phi(z):
        return -_centred(law, bar.ub, z, bar.lb) + upper_part - target

    at_lb = upper_part - target
    at_zero = phi(np.zeros_like(v))
    solvable = (at_lb <= 0) & (at_zero >= 0)
    root = bracketed_root(phi, np.zeros_like(v), np.full_like(v, bar.lb), _xtol(law))
    root = np.where(at_lb == 0, bar.lb, root)
    mass = law.mass(root, bar.lb) + law.mass(v, bar.ub)
    ok = solvable & (mass <= cap_u + mass_tol)
    return np.where(ok, root, INF)


def theta(law: ImpliedLaw, bar: BarrierPair, v, mass_tol: float = 1e-12):
    """Upper cut point z in [ub, K_max] for the embedding from ub; -inf when infeasible."""
    v = np.clip(np.asarray(v, dtype=float), bar.lb, bar.ub)
    s0 = law.mean()
    _, cap_l = _caps(law, bar)
    target = s0 - bar.lb
    lower_part = _centred(law, bar.lb, bar.lb, v)

    def big_theta(z):
        return lower_part + _centred(law, bar.lb, bar.ub, z) - target

    at_ub = lower_part - target
    at_top = big_theta(np.full_like(v, law.hi))
    solvable = (at_ub <= 0) & (at_top >= 0)
    root = bracketed_root(big_theta, np.full_like(v, bar.ub), np.full_like(v, law.hi), _xtol(law))
    root = np.where(at_ub == 0, bar.ub, root)
    mass = law.mass(bar.lb, v) + law.mass(bar.ub, root)
    ok = solvable & (mass <= cap_l + mass_tol)
    return np.where(ok, root, -INF)


def kappa_from(bar: BarrierPair, psi_v, theta_v):
    psi_v = np.asarray(psi_v, dtype=float)
    theta_v = np.asarray(theta_v, dtype=float)
    with np.errstate(invalid="ignore"):
        num = bar.ub * (theta_v - bar.lb) + bar.lb * (bar.ub - psi_v)
        den = theta_v - bar.lb + bar.ub - psi_v
        return num / den


def _feasible_interval(flag, lo: float, hi: float, n: int = 201, iters: int = 60) -> tuple[float, float]:
    """Closed interval where a monotone-domain predicate holds, scanned then refined.

    Returns (inf, -inf) when the predicate fails on the whole scan.  Refined
    endpoints always lie on the feasible side.
    """
    grid = np.linspace(lo, hi, n)
    ok = flag(grid)
    if not ok.any():
        return INF, -INF
    idx = np.flatnonzero(ok)
    i0, i1 = idx[0], idx[-1]

    def refine(good: float, bad: float) -> float:
        g = np.array([good])
        b = np.array([bad])
        for _ in range(iters):
            mid = 0.5 * (g + b)
            m_ok = flag(mid)
            g = np.where(m_ok, mid, g)
            b = np.where(m_ok, b, mid)
            if abs(float(g[0] - b[0])) < 1e-13 * max(1.0, abs(hi)):
                break
        return float(g[0])

    left = grid[i0] if i0 == 0 else refine(grid[i0], grid[i0 - 1])
    right = grid[i1] if i1 == n - 1 else refine(grid[i1], grid[i1 + 1])
    return left, right


@dataclass
class SubhedgeGeometry:
    law: ImpliedLaw
    barriers: BarrierPair
    psi_domain: tuple[float, float]
    theta_domain: tuple[float, float]
    v_lo: float
    v_hi: float

    @property
    def empty(self) -> bool:
        """The EmptyRange marker: v_hi < v_lo signals lower case IV."""
        return not (self.v_hi >= self.v_lo)

    def psi(self, v):
        return psi(self.law, self.barriers, v)

    def theta(self, v):
        return theta(self.law, self.barriers, v)

    def kappa(self, v):
        return kappa_from(self.barriers, self.psi(v), self.theta(v))

    def dump(self, n: int = 200) -> np.ndarray:
        """Rows (v, psi, theta, kappa) on n points of [lb, ub]."""
        v = np.linspace(self.barriers.lb, self.barriers.ub, n)
        p = self.psi(v)
        t = self.theta(v)
        return np.column_stack([v, p, t, kappa_from(self.barriers, p, t)])


def kappa_and_range(law: ImpliedLaw, bar: BarrierPair, n_scan: int = 201) -> SubhedgeGeometry:
    bar.validate(law)
    psi_dom = _feasible_interval(lambda v: np.isfinite(psi(law, bar, v)), bar.lb, bar.ub, n_scan)
    theta_dom = _feasible_interval(lambda v: np.isfinite(theta(law, bar, v)), bar.lb, bar.ub, n_scan)
    v_hi = min(psi_dom[1], theta_dom[1])
    v_lo = max(psi_dom[0], theta_dom[0])
    return SubhedgeGeometry(law, bar, psi_dom, theta_dom, v_lo, v_hi)
