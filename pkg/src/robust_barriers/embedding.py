"""Extremal market models: composed Skorokhod embeddings, built and simulated.

Each model is a small graph of stages.  A stage starts Brownian motion at a
level and stops it with one rule: an exact two-level hit, an Azema-Yor rule
(stop when the running maximum reaches the barycentre function of the target
law at the current level) or its mirror image driven by the running minimum.
Atoms of a stage target may be routed to a follow-up stage; the remaining
mass is where the price path finally stops.

Simulation uses a ladder scheme for the AY rules: the running maximum is
advanced in steps of size ``h`` and, from the current maximum ``m``, Brownian
motion reaches ``m + h`` before the stopping level ``b`` with probability
``(m - b) / (m + h - b)`` exactly (``b`` frozen at the step midpoint).  A
watched barrier lying inside the downward excursion is detected with a
three-way split of the same gambler's-ruin probabilities, so touch flags are
exact up to the freezing of ``b`` within a step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .barycentre import (
    INF,
    BarrierPair,
    barycentre,
    gamma_plus,
    rho_minus,
    rho_plus,
)
from .bounds import Classification, PriceBound, classify_lower, classify_upper
from .errors import CenterMismatch, HorizonExceeded, StageMassNegative, ZStarNotFound
from .hedges import FIRST_LB, FIRST_NONE, FIRST_UB, PathOutcome, double_touch_indicator
from .market_input import ImpliedLaw
from .numerics import bracketed_root


# ---------------------------------------------------------------------------
# Stage target measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Target:
    """Finite measure: weighted restrictions of a base law plus atoms.

    ``pieces`` holds ``(a, b, w)`` meaning ``w * mu`` restricted to ``(a, b)``.
    """

    law: ImpliedLaw
    pieces: tuple = ()
    atoms: tuple = ()

    def mass(self) -> float:
        m = sum(w * float(self.law.mass(a, b)) for a, b, w in self.pieces)
        return m + sum(p for _, p in self.atoms)

    def moment(self) -> float:
        m = sum(w * float(self.law.partial_moment(a, b)) for a, b, w in self.pieces)
        return m + sum(x * p for x, p in self.atoms)

    def mean(self) -> float:
        return self.moment() / self.mass()

    def hull(self) -> tuple[float, float]:
        pts = [a for a, b, w in self.pieces if w > 0] + [x for x, p in self.atoms if p > 0]
        top = [b for a, b, w in self.pieces if w > 0] + [x for x, p in self.atoms if p > 0]
        return min(pts), max(top)

    def atom_mass(self, x: float) -> float:
        return sum(p for y, p in self.atoms if y == x)

    def below(self, x, inclusive: bool):
        """(mass, moment) of the part of the measure below x."""
        x = np.asarray(x, dtype=float)
        m0 = np.zeros_like(x)
        m1 = np.zeros_like(x)
        for a, b, w in self.pieces:
            c = np.clip(x, a, b)
            m0 += w * (self.law.cdf(c) - self.law.cdf(a))
            m1 += w * (self.law.moment_cdf(c) - self.law.moment_cdf(a))
        for y, p in self.atoms:
            hit = (y <= x) if inclusive else (y < x)
            m0 += p * hit
            m1 += p * y * hit
        return m0, m1

    def cdf(self, x):
        return self.below(x, True)[0] / self.mass()

    def without_atoms(self, levels) -> "Target":
        return Target(self.law, self.pieces, tuple((x, p) for x, p in self.atoms if x not in levels))


def _mesh(target: Target, n: int) -> np.ndarray:
    pts = []
    for a, b, w in target.pieces:
        if w > 0 and b > a:
            pts.append(np.linspace(a, b, n))
    for x, p in target.atoms:
        if p > 0:
            pts.append(np.array([x]))
    return np.unique(np.concatenate(pts))


def ay_table(target: Target, n: int = 2000, reverse: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Barycentre function of the target on a mesh, in (mirrored if reverse) coordinates.

    Forward: Psi(x) = barycentre of [x, inf).  Reverse: Phi(x) = barycentre of
    (-inf, x], returned mirrored as y = -x, Psi'(y) = -Phi(-y) so the same
    max-based ladder applies.  Atoms appear as duplicated mesh points so the
    inverse is flat across the jump of Psi.
    """
    x = _mesh(target, n)
    tot0, tot1 = target.mass(), target.moment()
    atoms = {xa for xa, p in target.atoms if p > 0}
    if not reverse:
        # Psi(x) with x included, and for atoms also Psi(x+) with x excluded
        b0, b1 = target.below(x, inclusive=False)
        xs = [x]
        up0, up1 = [tot0 - b0], [tot1 - b1]
        if atoms:
            xa = np.array(sorted(atoms))
            c0, c1 = target.below(xa, inclusive=True)
            xs.append(xa)
            up0.append(tot0 - c0)
            up1.append(tot1 - c1)
        xs = np.concatenate(xs)
        m0 = np.concatenate(up0)
        m1 = np.concatenate(up1)
        order = np.lexsort((-m0, xs))  # by x, then larger tail mass first
        xs, m0, m1 = xs[order], m0[order], m1[order]
        with np.errstate(divide="ignore", invalid="ignore"):
            psi = np.where(m0 > 1e-14 * tot0, m1 / m0, xs)
        psi = np.maximum(psi, xs)
        psi = np.maximum.accumulate(psi)
        return xs, psi
    b0, b1 = target.below(x, inclusive=True)
    xs = [x]
    lo0, lo1 = [b0], [b1]
    if atoms:
        xa = np.array(sorted(atoms))
        c0, c1 = target.below(xa, inclusive=False)
        xs.append(xa)
        lo0.append(c0)
        lo1.append(c1)
    xs = np.concatenate(xs)
    m0 = np.concatenate(lo0)
    m1 = np.concatenate(lo1)
    order = np.lexsort((m0, xs))
    xs, m0, m1 = xs[order], m0[order], m1[order]
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(m0 > 1e-14 * tot0, m1 / m0, xs)
    phi = np.minimum(phi, xs)
    phi = np.minimum.accumulate(phi[::-1])[::-1]
    # mirror: y = -x ascending
    return -xs[::-1], -phi[::-1]


# ---------------------------------------------------------------------------
# Stopping rules and stages
# ---------------------------------------------------------------------------


@dataclass
class StoppingRule:
    """One embedding primitive started at ``start``.

    kind: ``hit`` (exit of (a, b)), ``ay`` (running-max rule) or ``ray``
    (running-min rule, the reversed Azema-Yor embedding).
    """

    kind: str
    start: float
    target: Target | None = None
    levels: tuple[float, float] | None = None
    table: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.kind in ("ay", "ray"):
            centre = self.target.mean()
            scale = max(1.0, abs(self.start))
            if abs(centre - self.start) > 1e-8 * scale:
                raise CenterMismatch(f"target barycentre {centre:.12g} differs from start {self.start:.12g}")
            if self.table is None:
                self.table = ay_table(self.target, reverse=(self.kind == "ray"))
        elif self.kind == "hit":
            a, b = self.levels
            if not a <= self.start <= b:
                raise CenterMismatch(f"start {self.start} outside ({a}, {b})")
        else:
            raise ValueError(f"unknown rule {self.kind!r}")

    def stop_level(self, m):
        xs, psi = self.table
        return np.interp(m, psi, xs)

    def hazard(self) -> np.ndarray:
        """Cumulative killing hazard of the running maximum at the table levels.

        Between table points the stop level is linear in the maximum, so the
        gap d = M - b(M) is linear and each segment integrates in closed
        form.  When the gap closes at the top of the support the segment is
        finite only if the target has an atom there (gap ~ sqrt(top - M)).
        """
        if getattr(self, "_hazard", None) is None:
            xs, psi = self.table
            d = np.maximum(psi - xs, 0.0)
            dm = np.diff(psi)
            d0, d1 = d[:-1], d[1:]
            top_atom = xs.size > 1 and xs[-1] == xs[-2]
            with np.errstate(divide="ignore", invalid="ignore"):
                dd = d1 - d0
                seg = np.where(np.abs(dd) > 1e-12 * np.maximum(d0, 1e-300),
                               dm * np.log(d1 / d0) / dd, dm / d0)
                closing = (d1 <= 0) & (dm > 0)
                seg = np.where(closing, 2.0 * dm / d0 if top_atom else np.inf, seg)
            seg = np.where(dm > 0, seg, 0.0)
            self._hazard = np.concatenate([[0.0], np.cumsum(seg)])
        return self._hazard

    def sample_max(self, e: np.ndarray) -> np.ndarray:
        """Running maximum at the stopping time for unit exponential draws e."""
        xs, psi = self.table
        big_h = self.hazard()
        i = np.searchsorted(big_h, e, side="right") - 1
        beyond = i >= big_h.size - 1
        i = np.clip(i, 0, big_h.size - 2)
        d = np.maximum(psi - xs, 0.0)
        d0, d1 = d[i], d[i + 1]
        dm = psi[i + 1] - psi[i]
        rem = e - big_h[i]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dd = d1 - d0
            lin = np.abs(dd) > 1e-12 * np.maximum(d0, 1e-300)
            frac = np.where(lin, d0 * np.expm1(rem * dd / dm) / dd, rem * d0 / dm)
            frac = np.where(dm > 0, frac, 0.0)
        frac = np.clip(np.nan_to_num(frac, nan=1.0), 0.0, 1.0)
        return np.where(beyond, psi[-1], psi[i] + frac * dm)

    def watch_hazard(self, c: float) -> np.ndarray:
        """Cumulative rate, in the maximum, of excursions reaching c without stopping."""
        xs, psi = self.table
        m0, m1 = psi[:-1], psi[1:]
        b0, b1 = xs[:-1], xs[1:]
        dm = m1 - m0
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cross = np.where(b1 != b0, (c - b0) / (b1 - b0), np.where(b0 < c, 1.0, 0.0))
        # sub-interval of the segment where b < c
        lo = np.where(b0 < c, 0.0, np.clip(t_cross, 0.0, 1.0))
        hi = np.where(b0 < c, np.where(b1 < c, 1.0, np.clip(t_cross, 0.0, 1.0)), np.where(b1 < c, 1.0, lo))
        ok = (hi > lo) & (dm > 0) & (m0 > c)
        ma, mb = m0 + lo * dm, m0 + hi * dm
        da = ma - (b0 + lo * (b1 - b0))
        db = mb - (b0 + hi * (b1 - b0))
        with np.errstate(divide="ignore", invalid="ignore"):
            first = np.log((mb - c) / (ma - c))
            dd = db - da
            second = np.where(np.abs(dd) > 1e-12 * np.maximum(da, 1e-300),
                              (mb - ma) * np.log(db / da) / dd, (mb - ma) / da)
            seg = np.where(ok, np.maximum(first - second, 0.0), 0.0)
        return np.concatenate([[0.0], np.cumsum(np.nan_to_num(seg))])


def ay_rule(target: Target, start: float, reverse: bool = False) -> StoppingRule:
    return StoppingRule("ray" if reverse else "ay", start, target)


@dataclass
class Stage:
    name: str
    rule: StoppingRule
    routes: dict = field(default_factory=dict)  # atom level -> next stage name
    mass: float = 0.0  # probability of entering this stage


@dataclass
class ExtremalModel:
    side: str
    case: str
    law: ImpliedLaw
    barriers: BarrierPair
    stages: dict
    entry: str
    params: dict = field(default_factory=dict)

    def stage_order(self) -> list[str]:
        order, todo = [], [self.entry]
        while todo:
            name = todo.pop(0)
            if name in order:
                continue
            order.append(name)
            todo.extend(self.stages[name].routes.values())
        return order

    def stopped_measures(self) -> list[tuple[Target, float]]:
        """(normalised stage target without routed atoms, entering mass) per stage."""
        out = []
        for name in self.stage_order():
            st = self.stages[name]
            if st.rule.kind == "hit":
                continue
            t = st.rule.target
            out.append((t.without_atoms(st.routes.keys()), st.mass / t.mass()))
        return out

    def recomposition_tv(self, bins: int = 500) -> float:
        """Total variation between the recomposed stopped law and mu on a bin mesh."""
        lo, hi = 0.0, self.law.hi
        edges = np.linspace(lo, hi, bins + 1)
        total = np.zeros(bins)
        for tgt, scale in self.stopped_measures():
            c = tgt.below(edges, True)[0]
            total += scale * np.diff(c)
            if tgt.atoms:
                # atoms exactly on an edge belong to the bin on their right
                c_left = tgt.below(edges, False)[0]
                total += scale * (np.diff(c_left) - np.diff(c))
        mu = np.diff(self.law.cdf(edges))
        if np.asarray(self.law.atoms[0]).size:
            mu = np.diff(self.law.cdf_left(edges))
        return 0.5 * float(np.sum(np.abs(total - mu)))


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _restrict(law: ImpliedLaw, a: float, b: float, w: float = 1.0) -> tuple:
    return (float(a), float(b), float(w))


def _check_mass(name: str, m: float, tol: float = 1e-12) -> float:
    if m < -tol:
        raise StageMassNegative(f"{name} has negative mass {m:.3g}")
    return max(m, 0.0)


def _finish(model: ExtremalModel) -> ExtremalModel:
    """Propagate entering masses through the routes and run build-time checks."""
    model.stages[model.entry].mass = 1.0
    for name in model.stage_order():
        st = model.stages[name]
        if st.rule.kind == "hit":
            a, b = st.rule.levels
            x = st.rule.start
            p_b = (x - a) / (b - a)
            for lvl, p in ((a, 1 - p_b), (b, p_b)):
                if lvl in st.routes:
                    model.stages[st.routes[lvl]].mass += st.mass * p
        else:
            t = st.rule.target
            for lvl, nxt in st.routes.items():
                model.stages[nxt].mass += st.mass * t.atom_mass(lvl) / t.mass()
    tv = model.recomposition_tv()
    model.params["recomposition_tv"] = tv
    if tv > 1e-6:
        raise StageMassNegative(f"stage laws recompose to mu only within TV {tv:.3g}")
    return model


def build_upper_extremal(law: ImpliedLaw, bar: BarrierPair, cl: Classification | None = None) -> ExtremalModel:
    cl = cl or classify_upper(law, bar)
    lb, ub, s0, hi = bar.lb, bar.ub, law.mean(), law.hi
    p = dict(cl.params)
    stages: dict[str, Stage] = {}
    if cl.case == "I":
        big_r, z0 = p["K"], p["z0"]
        atom = _check_mass("atom at ub", 1.0 - float(law.mass(big_r, z0)))
        t1 = Target(law, (_restrict(law, big_r, z0),), ((ub, atom),))
        t2 = Target(law, (_restrict(law, 0.0, big_r), _restrict(law, z0, hi)))
        stages["s1"] = Stage("s1", ay_rule(t1, s0), {ub: "s2"})
        stages["s2"] = Stage("s2", ay_rule(t2, ub, reverse=True))
        p["atom_ub"] = atom
    elif cl.case == "II":
        w0, r = p["w0"], p["K"]
        atom = _check_mass("atom at lb", 1.0 - float(law.mass(w0, r)))
        t1 = Target(law, (_restrict(law, w0, r),), ((lb, atom),))
        t2 = Target(law, (_restrict(law, 0.0, w0), _restrict(law, r, hi)))
        stages["s1"] = Stage("s1", ay_rule(t1, s0, reverse=True), {lb: "s2"})
        stages["s2"] = Stage("s2", ay_rule(t2, lb))
        p["atom_lb"] = atom
    elif cl.case == "III":
        w0, z, c, a = p["K4"], p["K1"], p["K2"], p["K3"]
        inner = float(law.mass(a, c))
        # nu3 (from lb) and nu2 (from ub) fix p and q
        p_mass = float(law.mass(0.0, w0)) + float(law.mass(c, z))
        q_mass = float(law.mass(w0, a)) + float(law.mass(z, hi))
        if abs(p_mass + q_mass + inner - 1.0) > 1e-9:
            raise StageMassNegative("case III stage masses do not add up")
        t1 = Target(law, (_restrict(law, a, c),), ((lb, p_mass), (ub, q_mass)))
        t2 = Target(law, (_restrict(law, z, hi),), ((lb, float(law.mass(w0, a))),))
        t3 = Target(law, (_restrict(law, 0.0, w0),), ((ub, float(law.mass(c, z))),))
        t4 = Target(law, (_restrict(law, w0, a),))
        t5 = Target(law, (_restrict(law, c, z),))
        stages["s1"] = Stage("s1", ay_rule(t1, s0), {lb: "s3", ub: "s2"})
        stages["s2"] = Stage("s2", ay_rule(t2, ub), {lb: "s4"})
        stages["s3"] = Stage("s3", ay_rule(t3, lb, reverse=True), {ub: "s5"})
        stages["s4"] = Stage("s4", ay_rule(t4, lb))
        stages["s5"] = Stage("s5", ay_rule(t5, ub))
        p.update({"p": p_mass, "q": q_mass})
    else:
        big_r, r = p["K1"], p["K2"]
        cap_l = (s0 - lb) / (ub - lb)
        cap_u = (ub - s0) / (ub - lb)
        a1 = _check_mass("nu1 atom", cap_l - float(law.mass(big_r, hi)))
        a2 = _check_mass("nu2 atom", cap_u - float(law.mass(0.0, r)))
        lo_z = r
        hi_z = big_r
        # z*: mu((r, z*)) = atom at lb
        f = lambda z: law.mass(r, z) - a1
        if not (f(np.array([lo_z]))[0] <= 0 <= f(np.array([hi_z]))[0]):
            raise ZStarNotFound(f"no z* in ({lo_z:.6g}, {hi_z:.6g}) with mu((r, z*)) = {a1:.6g}")
        zs = float(bracketed_root(f, np.array([lo_z]), np.array([hi_z]), 1e-13 * hi)[0])
        # z1 in (r, z*): mu|(r, z1) + rest at z* has barycentre lb
        g1 = lambda z1: (law.partial_moment(r, z1) - lb * law.mass(r, z1)) + (a1 - law.mass(r, z1)) * (zs - lb)
        z1 = float(bracketed_root(g1, np.array([r]), np.array([zs]), 1e-13 * hi)[0])
        g2 = lambda z2: (law.partial_moment(z2, big_r) - ub * law.mass(z2, big_r)) + (a2 - law.mass(z2, big_r)) * (zs - ub)
        z2 = float(bracketed_root(g2, np.array([zs]), np.array([big_r]), 1e-13 * hi)[0])
        if not z1 <= zs <= z2:
            raise ZStarNotFound(f"z1={z1:.6g}, z*={zs:.6g}, z2={z2:.6g} out of order")
        at_star1 = _check_mass("nu3 atom", a1 - float(law.mass(r, z1)))
        at_star2 = _check_mass("nu4 atom", a2 - float(law.mass(z2, big_r)))
        stages["s0"] = Stage("s0", StoppingRule("hit", s0, levels=(lb, ub)), {lb: "s2", ub: "s1"})
        stages["s1"] = Stage("s1", ay_rule(Target(law, (_restrict(law, big_r, hi),), ((lb, a1),)), ub), {lb: "s3"})
        stages["s2"] = Stage("s2", ay_rule(Target(law, (_restrict(law, 0.0, r),), ((ub, a2),)), lb, reverse=True), {ub: "s4"})
        stages["s3"] = Stage("s3", ay_rule(Target(law, (_restrict(law, r, z1),), ((zs, at_star1),)), lb), {zs: "s5"})
        stages["s4"] = Stage("s4", ay_rule(Target(law, (_restrict(law, z2, big_r),), ((zs, at_star2),)), ub, reverse=True), {zs: "s5"})
        mid = Target(law, (_restrict(law, z1, z2),))
        if at_star1 + at_star2 > 0:
            stages["s5"] = Stage("s5", ay_rule(mid, zs))
        p.update({"z_star": zs, "z1": z1, "z2": z2, "nu1_atom": a1, "nu2_atom": a2})
        entry = "s0"
        return _finish(ExtremalModel("upper", cl.case, law, bar, stages, entry, p))
    return _finish(ExtremalModel("upper", cl.case, law, bar, stages, "s1", p))


def _tail_split(law: ImpliedLaw, lo_cut: float, hi_cut: float, mass_u: float, ub: float) -> tuple[float, float]:
    """Fractions (x, y) of mu on (0, lo_cut) and (hi_cut, K_max) sent from ub.

    Solves x m0 + y m1 = mass_u and x M0 + y M1 = ub * mass_u.
    """
    m0 = float(law.mass(0.0, lo_cut))
    m1 = float(law.mass(hi_cut, law.hi))
    if mass_u <= 0:
        return 0.0, 0.0
    c0 = float(law.partial_moment(0.0, lo_cut)) - ub * m0
    c1 = float(law.partial_moment(hi_cut, law.hi)) - ub * m1
    # x*c0 + y*c1 = 0 with x*m0 + y*m1 = mass_u
    det = m0 * c1 - m1 * c0
    if det == 0:
        raise StageMassNegative("degenerate tail split")
    x = mass_u * c1 / det
    y = -mass_u * c0 / det
    tol = 1e-9
    if min(x, y) < -tol or max(x, y) > 1 + tol:
        raise StageMassNegative(f"tail split fractions out of range: x={x:.6g}, y={y:.6g}")
    return float(np.clip(x, 0, 1)), float(np.clip(y, 0, 1))


def _lower_iv_construction(law: ImpliedLaw, bar: BarrierPair) -> tuple[dict, dict]:
    """Embedding that never hits both barriers (the avoiding construction)."""
    lb, ub, s0, hi = bar.lb, bar.ub, law.mean(), law.hi
    cap_l = (s0 - lb) / (ub - lb)
    cap_u = (ub - s0) / (ub - lb)
    stages: dict[str, Stage] = {}
    # construction from ub: (lb, beta] u [ub, inf) centred at ub, the rest from b_*
    m_above = float(law.mass(ub, hi))
    if m_above > 0:
        f = lambda beta: (law.partial_moment(lb, beta) + law.partial_moment(ub, hi)) - ub * (law.mass(lb, beta) + m_above)
        if float(f(np.array([ub]))[0]) <= 0:
            beta = float(bracketed_root(f, np.array([lb]), np.array([ub]), 1e-13 * hi)[0])
            p_star = float(law.mass(lb, beta)) + m_above
            if p_star < cap_l:
                b_star = (s0 - p_star * ub) / (1.0 - p_star)
                stages["s0"] = Stage("s0", StoppingRule("hit", s0, levels=(b_star, ub)), {ub: "s1", b_star: "s2"})
                stages["s1"] = Stage("s1", ay_rule(Target(law, ((lb, beta, 1.0), (ub, hi, 1.0))), ub))
                stages["s2"] = Stage("s2", ay_rule(Target(law, ((0.0, lb, 1.0), (beta, ub, 1.0))), b_star))
                return stages, {"construction": "upper-side", "b_star": b_star, "beta": beta, "p_star": p_star}
    m_below = float(law.mass(0.0, lb))
    if m_below > 0:
        f = lambda beta: (law.partial_moment(beta, ub) + law.partial_moment(0.0, lb)) - lb * (law.mass(beta, ub) + m_below)
        if float(f(np.array([lb]))[0]) >= 0:
            beta = float(bracketed_root(f, np.array([lb]), np.array([ub]), 1e-13 * hi)[0])
            p_star = float(law.mass(beta, ub)) + m_below
            if p_star < cap_u:
                b_star = (s0 - p_star * lb) / (1.0 - p_star)
                stages["s0"] = Stage("s0", StoppingRule("hit", s0, levels=(lb, b_star)), {lb: "s1", b_star: "s2"})
                stages["s1"] = Stage("s1", ay_rule(Target(law, ((0.0, lb, 1.0), (beta, ub, 1.0))), lb, reverse=True))
                stages["s2"] = Stage("s2", ay_rule(Target(law, ((lb, beta, 1.0), (ub, hi, 1.0))), b_star, reverse=True))
                return stages, {"construction": "lower-side", "b_star": b_star, "beta": beta, "p_star": p_star}
    if m_above == 0 or m_below == 0:
        # all mass on one side of a barrier: any UI embedding from S0 avoids it
        stages["s0"] = Stage("s0", ay_rule(Target(law, ((0.0, hi, 1.0),)), s0, reverse=(m_below == 0)))
        return stages, {"construction": "direct"}
    raise StageMassNegative("no avoiding construction applies to this law and barrier pair")


def build_lower_extremal(law: ImpliedLaw, bar: BarrierPair, cl: Classification | None = None) -> ExtremalModel:
    cl = cl or classify_lower(law, bar)
    lb, ub, s0, hi = bar.lb, bar.ub, law.mean(), law.hi
    p = dict(cl.params)
    if cl.case == "IV":
        stages, extra = _lower_iv_construction(law, bar)
        p.update(extra)
        return _finish(ExtremalModel("lower", "IV", law, bar, stages, "s0", p))
    v, k1, k2 = p["K3"], p["K1"], p["K2"]
    cap_l = (s0 - lb) / (ub - lb)
    cap_u = (ub - s0) / (ub - lb)
    # from lb: (psi, lb) u (v, ub) plus an atom at ub; from ub: (lb, v) u (ub, theta) plus an atom at lb
    atom_u = _check_mass("atom at ub", cap_u - float(law.mass(k2, lb)) - float(law.mass(v, ub)), 1e-9)
    atom_l = _check_mass("atom at lb", cap_l - float(law.mass(lb, v)) - float(law.mass(ub, k1)), 1e-9)
    t_lb = Target(law, ((k2, lb, 1.0), (v, ub, 1.0)), ((ub, atom_u),) if atom_u > 0 else ())
    t_ub = Target(law, ((lb, v, 1.0), (ub, k1, 1.0)), ((lb, atom_l),) if atom_l > 0 else ())
    x, y = _tail_split(law, k2, k1, atom_u, ub)
    stages = {
        "s0": Stage("s0", StoppingRule("hit", s0, levels=(lb, ub)), {lb: "s1", ub: "s2"}),
        "s1": Stage("s1", ay_rule(t_lb, lb), {ub: "s3"} if atom_u > 0 else {}),
        "s2": Stage("s2", ay_rule(t_ub, ub, reverse=True), {lb: "s4"} if atom_l > 0 else {}),
    }
    if atom_u > 0:
        stages["s3"] = Stage("s3", ay_rule(Target(law, ((0.0, k2, x), (k1, hi, y))), ub))
    if atom_l > 0:
        stages["s4"] = Stage("s4", ay_rule(Target(law, ((0.0, k2, 1.0 - x), (k1, hi, 1.0 - y))), lb, reverse=True))
    p.update({"atom_ub": atom_u, "atom_lb": atom_l, "tail_split": (x, y)})
    return _finish(ExtremalModel("lower", cl.case, law, bar, stages, "s0", p))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class SimulationResult:
    terminal: np.ndarray
    outcome: PathOutcome
    indicator: np.ndarray
    stage_counts: dict
    stage_visits: dict

    def summary(self) -> dict:
        n = self.terminal.size
        ind = self.indicator
        return {
            "n_paths": int(n),
            "touch_mean": float(ind.mean()),
            "touch_std_err": float(ind.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
            "stage_counts": {k: int(v) for k, v in self.stage_counts.items()},
        }


class _Flags:
    """Per-path barrier bookkeeping with event times for the hitting order."""

    def __init__(self, n: int):
        self.t_lb = np.full(n, np.inf)
        self.t_ub = np.full(n, np.inf)

    def mark(self, idx, which: str, t):
        arr = self.t_lb if which == "lb" else self.t_ub
        arr[idx] = np.minimum(arr[idx], t)


def _run_hit(rule: StoppingRule, n: int, rng: np.random.Generator) -> np.ndarray:
    a, b = rule.levels
    p_b = (rule.start - a) / (b - a)
    return np.where(rng.random(n) < p_b, b, a)


def _run_ladder(rule: StoppingRule, start: float, n: int, rng: np.random.Generator, h: float,
                watch_up: float | None, watch_dn: float | None, max_steps: int):
    """Max-based ladder in (possibly mirrored) coordinates.

    Returns terminal levels, the step time at which ``watch_up`` was reached
    by the running maximum and the time at which ``watch_dn`` was touched
    inside a downward excursion (inf if never).
    """
    xs, psi = rule.table
    top = float(xs[-1])
    m = np.full(n, float(start))
    alive = np.ones(n, dtype=bool)
    out = np.empty(n)
    t_up = np.full(n, np.inf)
    t_dn = np.full(n, np.inf)
    if watch_up is not None and start >= watch_up:
        t_up[:] = 0.0
    if watch_dn is not None and start <= watch_dn:
        t_dn[:] = 0.0
    step = 0
    idx = np.arange(n)
    while idx.size:
        if step > max_steps:
            raise HorizonExceeded(f"{idx.size} paths unstopped after {max_steps} ladder steps")
        mi = m[idx]
        nxt = np.minimum(mi + h, top)
        width = nxt - mi
        b = rule.stop_level(0.5 * (mi + nxt))
        at_top = width <= 0
        u = rng.random(idx.size)
        up = np.zeros(idx.size, dtype=bool)
        # optional watched level strictly inside the downward excursion range
        if watch_dn is not None:
            pending = ~np.isfinite(t_dn[idx]) & (b < watch_dn) & (watch_dn < mi) & ~at_top
        else:
            pending = np.zeros(idx.size, dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            p_up = np.where(at_top, 0.0, (mi - b) / (nxt - b))
            p1 = np.where(pending, (mi - watch_dn) / (nxt - watch_dn) if watch_dn is not None else 0.0, 0.0)
        # plain paths
        plain = ~pending
        up[plain] = u[plain] < p_up[plain]
        # three-way: up before the watched level, else touch then up-or-stop
        if pending.any():
            first_up = u < p1
            touched = pending & ~first_up
            t_dn[idx[touched]] = step + 0.5
            u2 = rng.random(idx.size)
            with np.errstate(divide="ignore", invalid="ignore"):
                p2 = (watch_dn - b) / (nxt - b)
            up[pending] = np.where(first_up[pending], True, u2[pending] < p2[pending])
        stop = ~up
        # stopped paths: running max uniform within the step, stop at b(max)
        if stop.any():
            s_idx = idx[stop]
            m_stop = np.where(at_top[stop], mi[stop], mi[stop] + rng.random(s_idx.size) * width[stop])
            lvl = np.where(at_top[stop], top, rule.stop_level(m_stop))
            out[s_idx] = lvl
            if watch_up is not None:
                reach = ~np.isfinite(t_up[s_idx]) & (m_stop >= watch_up)
                t_up[s_idx[reach]] = step + 0.75
            if watch_dn is not None:
                below = ~np.isfinite(t_dn[s_idx]) & (lvl <= watch_dn)
                t_dn[s_idx[below]] = step + 0.9
        go = idx[up]
        m[go] = nxt[up]
        if watch_up is not None:
            reach = ~np.isfinite(t_up[go]) & (m[go] >= watch_up)
            t_up[go[reach]] = step + 1.0
        idx = go
        step += 1
    return out, t_up, t_dn


def _run_exact(rule: StoppingRule, start: float, n: int, rng: np.random.Generator,
               watch_up: float | None, watch_dn: float | None):
    """Sample the AY stop through the law of the running maximum.

    Same return convention as ``_run_ladder``; event times are maximum
    levels, which increase with calendar time inside the stage.
    """
    xs, psi = rule.table
    m_star = rule.sample_max(rng.exponential(size=n))
    out = rule.stop_level(m_star)
    out = np.where(m_star >= psi[-1], xs[-1], out)
    span = max(psi[-1] - start, 1e-300)
    t_up = np.full(n, np.inf)
    t_dn = np.full(n, np.inf)
    if watch_up is not None:
        t_up = np.where(m_star >= watch_up, max(watch_up - start, 0.0) / span, np.inf)
    if watch_dn is not None:
        if start <= watch_dn:
            t_dn[:] = 0.0
        else:
            hc = rule.watch_hazard(watch_dn)
            e2 = rng.exponential(size=n)
            at_stop = np.interp(m_star, psi, hc)
            early = e2 < at_stop
            t_touch = np.interp(e2, hc, psi)
            t_dn = np.where(early, (t_touch - start) / span, np.inf)
            late = ~early & (out <= watch_dn)
            t_dn = np.where(late, (m_star - start) / span + 1e-9, t_dn)
    return out, t_up, t_dn


def simulate(model: ExtremalModel, n_paths: int, dt: float = 1e-5, seed: int = 0,
             max_steps: int | None = None, method: str = "exact") -> SimulationResult:
    """Simulate stopped Brownian paths through the stage graph of ``model``.

    ``method="exact"`` samples each AY stop from the law of the running
    maximum (no time step).  ``method="ladder"`` walks the maximum in steps
    of ``sqrt(dt)`` times the support width.
    """
    if method not in ("exact", "ladder"):
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    lb, ub = model.barriers.lb, model.barriers.ub
    law = model.law
    scale = law.hi
    h = math.sqrt(dt) * scale
    max_steps = max_steps or int(20 * scale / h) + 1000
    n = int(n_paths)
    flags = _Flags(n)
    terminal = np.full(n, np.nan)
    stage_of = np.full(n, -1)
    order = model.stage_order()
    pos = {name: i for i, name in enumerate(order)}
    stage_of[:] = pos[model.entry]
    counts = {name: 0 for name in order}
    visits = {name: np.zeros(n, dtype=bool) for name in order}
    if method == "exact":
        run = lambda rule, start, k, up, dn: _run_exact(rule, start, k, rng, up, dn)
    else:
        run = lambda rule, start, k, up, dn: _run_ladder(rule, start, k, rng, h, up, dn, max_steps)
    s0 = law.mean()
    if s0 <= lb:
        flags.t_lb[:] = 0
    for k, name in enumerate(order):
        st = model.stages[name]
        idx = np.flatnonzero(stage_of == k)
        counts[name] = idx.size
        visits[name][idx] = True
        if idx.size == 0:
            continue
        base_t = 10.0 * max_steps * k  # later stages happen strictly later
        rule = st.rule
        if rule.kind == "hit":
            lvl = _run_hit(rule, idx.size, rng)
            for lev, which in ((lb, "lb"), (ub, "ub")):
                hit = lvl == lev if which == "ub" else lvl <= lev
                if which == "ub":
                    hit = lvl >= lev
                flags.mark(idx[hit], which, base_t + 1.0)
        else:
            unhit_lb = ~np.isfinite(flags.t_lb[idx])
            unhit_ub = ~np.isfinite(flags.t_ub[idx])
            if rule.kind == "ay":
                lvl, t_up, t_dn = run(rule, rule.start, idx.size, ub, lb)
                t_ub_new, t_lb_new = t_up, t_dn
            else:
                lvl_m, t_up, t_dn = run(rule, -rule.start, idx.size, -lb, -ub)
                lvl = -lvl_m
                t_lb_new, t_ub_new = t_up, t_dn
            flags.mark(idx[unhit_lb], "lb", base_t + t_lb_new[unhit_lb])
            flags.mark(idx[unhit_ub], "ub", base_t + t_ub_new[unhit_ub])
        # route atoms to follow-up stages, stop the rest
        routed = np.zeros(idx.size, dtype=bool)
        for lev, nxt in st.routes.items():
            r = lvl == lev
            stage_of[idx[r]] = pos[nxt]
            routed |= r
        done = idx[~routed]
        terminal[done] = lvl[~routed]
        stage_of[done] = -2
    hit_lb = np.isfinite(flags.t_lb)
    hit_ub = np.isfinite(flags.t_ub)
    first = np.where(flags.t_lb < flags.t_ub, FIRST_LB, np.where(flags.t_ub < flags.t_lb, FIRST_UB, FIRST_NONE))
    first = np.where(hit_lb & hit_ub & (first == FIRST_NONE), FIRST_LB, first)
    outcome = PathOutcome(terminal, hit_lb, hit_ub, first, times={"lb": flags.t_lb, "ub": flags.t_ub})
    return SimulationResult(terminal, outcome, double_touch_indicator(outcome), counts, visits)


def ks_distance(samples: np.ndarray, law: ImpliedLaw) -> float:
    x = np.sort(samples)
    n = x.size
    f = law.cdf(x)
    f_left = law.cdf_left(x)
    emp_hi = np.arange(1, n + 1) / n
    emp_lo = np.arange(0, n) / n
    return float(max(np.max(np.abs(emp_hi - f)), np.max(np.abs(f_left - emp_lo))))


def verify_tightness(model: ExtremalModel, bound: PriceBound, n_paths: int = 100_000, seed: int = 0,
                     dt: float = 1e-5) -> dict:
    if bound.case != model.case or bound.side != model.side:
        raise ValueError(f"model {model.side} {model.case} does not match bound {bound.side} {bound.case}")
    res = simulate(model, n_paths, dt=dt, seed=seed)
    s = res.summary()
    ks = ks_distance(res.terminal, model.law)
    mc, se = s["touch_mean"], s["touch_std_err"]
    return {
        "side": model.side,
        "case": model.case,
        "mc_estimate": mc,
        "std_err": se,
        "bound_value": bound.value,
        "ks_terminal": ks,
        "pass": bool(abs(mc - bound.value) <= 3 * se + 0.005),
        "stage_counts": s["stage_counts"],
        "n_paths": s["n_paths"],
        "seed": seed,
        "dt": dt,
    }
