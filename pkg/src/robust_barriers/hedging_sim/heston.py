"""Heston market: characteristic function, call curve, implied law and paths."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np
from scipy import special

from ..errors import DomainError, QuadratureFailure
from ..market_input import CallCurve, TabulatedLaw


@dataclass(frozen=True)
class HestonParams:
    """dS = sqrt(v) S dW1, dv = kappa (theta - v) dt + xi sqrt(v) dW2, d<W1, W2> = rho dt."""

    s0: float = 100.0
    v0: float = 0.5
    kappa: float = 0.6
    theta: float = 1.0
    xi: float = 1.3
    rho: float = 0.15
    T: float = 1.0
    steps_per_year: int = 365
    substeps: int = 8

    def __post_init__(self):
        for name in ("s0", "v0", "kappa", "theta", "T"):
            if not getattr(self, name) > 0:
                raise DomainError(f"Heston {name} must be positive")
        if self.xi < 0:
            raise DomainError("Heston vol-of-vol must be non-negative")
        if not -1.0 < self.rho < 1.0:
            raise DomainError("Heston correlation must lie in (-1, 1)")
        if self.steps_per_year < 1 or self.substeps < 1:
            raise DomainError("step counts must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.steps_per_year * self.T)))

    def to_dict(self) -> dict:
        return asdict(self)


def _cf_coefficients(params: HestonParams, u, tau: float):
    """(C, D) with log E[exp(i u log(S_{t+tau}/S_t)) | v_t = v] = C + D v."""
    p = params
    u = np.asarray(u, dtype=complex)
    if p.xi == 0:
        # deterministic variance: integrated variance is known in closed form
        decay = (1 - math.exp(-p.kappa * tau)) / p.kappa
        q = -0.5 * (1j * u + u * u)
        return q * p.theta * (tau - decay), q * decay
    a = p.kappa - p.rho * p.xi * 1j * u
    d = np.sqrt(a * a + p.xi**2 * (1j * u + u * u))
    g = (a - d) / (a + d)
    e = np.exp(-d * tau)
    c = p.kappa * p.theta / p.xi**2 * ((a - d) * tau - 2.0 * np.log((1 - g * e) / (1 - g)))
    dd = (a - d) / p.xi**2 * (1 - e) / (1 - g * e)
    return c, dd


def log_cf(params: HestonParams, u, tau: float | None = None, v=None):
    """E[exp(i u log(S_{t+tau}/S_t))] given v_t = v, in the rotation-safe form."""
    tau = params.T if tau is None else tau
    v = params.v0 if v is None else v
    c, dd = _cf_coefficients(params, u, tau)
    return np.exp(c + dd * v)


@lru_cache(maxsize=8)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def _nodes(u_max: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _legendre(n)
    return (x + 1) * u_max / 2, w * u_max / 2


def _cutoff(params: HestonParams, tau: float, v: float, tol: float = 1e-16) -> float:
    """Frequency beyond which |phi| is negligible, found by doubling."""
    u = 8.0
    while u < 1e4:
        if abs(log_cf(params, np.array([u - 0.5j]), tau, v)[0]) < tol:
            return u
        u *= 1.5
    raise QuadratureFailure("characteristic function does not decay; horizon too short for the quadrature")


def heston_call_prices(params: HestonParams, strikes, n_nodes: int = 2000) -> np.ndarray:
    """Call prices at time 0 by the Lewis single-integral formula."""
    k = np.asarray(strikes, dtype=float)
    out = np.maximum(params.s0 - k, 0.0).astype(float)
    pos = k > 0
    if not pos.any():
        return out
    u, w = _nodes(_cutoff(params, params.T, params.v0), n_nodes)
    phi = log_cf(params, u - 0.5j)
    kk = np.log(params.s0 / k[pos])[:, None]
    integrand = np.real(np.exp(1j * u * kk) * phi) / (u * u + 0.25)
    price = params.s0 - np.sqrt(params.s0 * k[pos]) / math.pi * (integrand @ w)
    if not np.all(np.isfinite(price)):
        raise QuadratureFailure("non-finite Heston call price")
    out[pos] = np.clip(price, np.maximum(params.s0 - k[pos], 0.0), params.s0)
    return out


def _return_range(params: HestonParams, tau: float, v: float, width: float = 12.0) -> tuple[float, float, float]:
    """Truncation range for log(S_{t+tau}/S_t) from cumulants read off the characteristic function."""
    sd0 = math.sqrt(max(float(expected_variance(params, v, tau)) * tau, 1e-14))
    h = 0.05 / sd0
    lg = np.log(log_cf(params, np.array([h, 2 * h]), tau, v))
    g1, g2 = lg.real
    c1 = lg[0].imag / h
    c2 = max(-(2 * g1) / h**2 + (g2 - 4 * g1) / (6 * h**2), sd0**2)
    c4 = max(2 * (g2 - 4 * g1) / h**4, 0.0)
    half = width * math.sqrt(c2 + math.sqrt(c4))
    return c1 - half, c1 + half, math.sqrt(c2)


def heston_call_conditional(params: HestonParams, s, v, strike: float, tau: float, n_buckets: int = 16,
                            max_terms: int = 2048) -> np.ndarray:
    """Call prices at one strike and horizon for many (S_t, v_t) states (COS method).

    The log characteristic function is affine in v, so its coefficients are
    evaluated once per horizon.  States are grouped by variance; each group
    gets a truncation range from the return cumulants and enough cosine terms
    to resolve its narrowest density.  Puts are expanded and calls follow
    from parity, which keeps deep in-the-money states stable.
    """
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.maximum(s - strike, 0.0)
    if tau <= 0 or s.size == 0:
        return out
    order = np.argsort(v)
    for chunk in np.array_split(order, min(n_buckets, s.size)):
        if chunk.size == 0:
            continue
        a0, b0, sd_lo = _return_range(params, tau, float(v[chunk[0]]))
        a1, b1, _ = _return_range(params, tau, float(v[chunk[-1]]))
        a, b = min(a0, a1), max(b0, b1)
        n = int(min(max(math.ceil(2.5 * (b - a) / sd_lo), 64), max_terms))
        k = np.arange(n)
        w = k * math.pi / (b - a)
        c, dd = _cf_coefficients(params, w, tau)
        # Re[phi(w_k) exp(-i w_k a)], with the k = 0 term halved
        phase = np.exp(c[None, :] + v[chunk, None] * dd[None, :] - 1j * w[None, :] * a)
        x = np.log(s[chunk] / strike)
        d = np.clip(-x, a, b)[:, None]
        # put payoff K (1 - e^{x + y}) on y in [a, d]
        ang_d = w[None, :] * (d - a)
        sin_d, cos_d = np.sin(ang_d), np.cos(ang_d)
        with np.errstate(divide="ignore", invalid="ignore"):
            psi = np.where(k[None, :] == 0, d - a, sin_d / np.where(k == 0, 1.0, w)[None, :])
        chi = (cos_d * np.exp(d) - math.exp(a) + w[None, :] * sin_d * np.exp(d)) / (1 + w * w)[None, :]
        coef = 2.0 / (b - a) * strike * (psi - np.exp(x)[:, None] * chi)
        terms = np.real(phase) * coef
        terms[:, 0] *= 0.5
        put = np.maximum(terms.sum(axis=1), 0.0)
        sc = s[chunk]
        out[chunk] = np.clip(put + sc - strike, np.maximum(sc - strike, 0.0), sc)
    return out


def heston_density(params: HestonParams, s, n_nodes: int = 1500) -> np.ndarray:
    """Density of S_T by Fourier inversion of the log-price characteristic function."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    u, w = _nodes(_cutoff(params, params.T, params.v0), n_nodes)
    phi = log_cf(params, u)
    x = np.log(s[pos] / params.s0)[:, None]
    fx = (np.real(np.exp(-1j * u * x) * phi) @ w) / math.pi
    out[pos] = np.maximum(fx, 0.0) / s[pos]
    return out


def heston_law(params: HestonParams, k_max: float | None = None, n_nodes: int = 3000) -> TabulatedLaw:
    """Piecewise-linear density on a log-uniform mesh, tilted to unit mass and mean S0."""
    s0 = params.s0
    if k_max is None:
        k_max = 1000.0 * s0
    lo = s0 * math.exp(-12.0)
    nodes = np.concatenate([[0.0], np.exp(np.linspace(math.log(lo), math.log(k_max), n_nodes))])
    nodes = np.unique(np.concatenate([nodes, s0 * np.linspace(0.2, 5.0, 400)]))
    dens = heston_density(params, nodes)
    dens[-1] = 0.0
    return TabulatedLaw(nodes, dens, s0)


def heston_call_curve(params: HestonParams | None = None, k_max: float | None = None,
                      check_strikes=None) -> CallCurve:
    """Call curve backed by the Fourier-inverted Heston law, cross-checked against Lewis prices."""
    params = params or HestonParams()
    law = heston_law(params, k_max)
    ks = np.asarray(check_strikes if check_strikes is not None else params.s0 * np.array([0.25, 0.5, 0.8, 1.0, 1.2, 2.0, 5.0]))
    ref = heston_call_prices(params, ks)
    got = law.call(ks)
    err = float(np.max(np.abs(got - ref)))
    if err > 1e-3 * params.s0:
        raise QuadratureFailure(f"tabulated Heston law misprices calls by {err:.3g}")
    return CallCurve(law, "heston", params.s0, {"heston": params.to_dict(), "max_call_error": err})


def atm_implied_vol(params: HestonParams, price: float | None = None) -> float:
    """Black-Scholes vol matching the time-0 at-the-money Heston call."""
    from scipy import optimize

    s0, t = params.s0, params.T
    if price is None:
        price = float(heston_call_prices(params, [s0])[0])
    f = lambda sig: bs_call(s0, s0, t, sig) - price
    return float(optimize.brentq(f, 1e-4, 10.0, xtol=1e-12))


def bs_call(s, k, tau, sigma):
    s = np.asarray(s, dtype=float)
    sd = np.maximum(sigma * np.sqrt(np.maximum(tau, 0.0)), 1e-300)
    with np.errstate(divide="ignore"):
        d1 = (np.log(s / k) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    live = (np.asarray(tau) > 0) & (np.asarray(sigma) > 0)
    return np.where(live, s * special.ndtr(d1) - k * special.ndtr(d2), np.maximum(s - k, 0.0))


def bs_call_delta_vega(s, k, tau, sigma):
    s = np.asarray(s, dtype=float)
    sd = np.maximum(sigma * np.sqrt(np.maximum(tau, 1e-300)), 1e-300)
    d1 = (np.log(s / k) + 0.5 * sd * sd) / sd
    delta = special.ndtr(d1)
    vega = s * np.exp(-0.5 * d1 * d1) / math.sqrt(2 * math.pi) * np.sqrt(np.maximum(tau, 0.0))
    return delta, vega


def expected_variance(params: HestonParams, v, tau):
    """Mean of the average variance over the next tau given v (exact mean, any vol-of-vol)."""
    v = np.asarray(v, dtype=float)
    tau = np.maximum(np.asarray(tau, dtype=float), 1e-12)
    decay = (1 - np.exp(-params.kappa * tau)) / (params.kappa * tau)
    return params.theta + (v - params.theta) * decay


@dataclass
class HestonPaths:
    """Daily closes plus the extremes of the fine sub-grid inside each day."""

    params: HestonParams
    times: np.ndarray  # (n_steps + 1,)
    s: np.ndarray  # (n_paths, n_steps + 1) daily closes
    v: np.ndarray  # (n_paths, n_steps + 1)
    fine_min: np.ndarray  # (n_paths, n_steps) minimum over the sub-grid of each day
    fine_max: np.ndarray
    seed: int
    crossings: dict = None  # level -> first sub-grid step at or beyond it (-1 if never)

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.s[:, -1]


def heston_paths(params: HestonParams, n_paths: int, seed: int = 0, levels=()) -> HestonPaths:
    """Full-truncation Euler for the variance, exact exponential step for the price.

    The log-price step uses the truncated variance so each increment is a
    conditional martingale; daily closes are recorded along with the sub-grid
    minimum and maximum of each day.  For each of ``levels`` the first
    sub-grid step at or beyond the level (below it for levels under S0) is
    recorded, which fixes the hitting order under exact monitoring.
    """
    p = params
    n_steps = p.n_steps
    sub = p.substeps
    dt = p.T / (n_steps * sub)
    rng = np.random.default_rng(seed)
    n = int(n_paths)
    s = np.empty((n, n_steps + 1))
    v = np.empty((n, n_steps + 1))
    fmin = np.empty((n, n_steps))
    fmax = np.empty((n, n_steps))
    x = np.full(n, math.log(p.s0))
    var = np.full(n, p.v0)
    s[:, 0] = p.s0
    v[:, 0] = p.v0
    rho_c = math.sqrt(1 - p.rho**2)
    sq = math.sqrt(dt)
    levels = tuple(float(l) for l in levels)
    log_levels = [(l, math.log(l), l < p.s0) for l in levels]
    cross = {l: np.full(n, -1, dtype=np.int64) for l in levels}
    step = 0
    for d in range(n_steps):
        lo = x.copy()
        hi = x.copy()
        for _ in range(sub):
            step += 1
            z1 = rng.standard_normal(n)
            z2 = p.rho * z1 + rho_c * rng.standard_normal(n)
            vp = np.maximum(var, 0.0)
            root = np.sqrt(vp)
            x = x - 0.5 * vp * dt + root * sq * z1
            var = var + p.kappa * (p.theta - vp) * dt + p.xi * root * sq * z2
            np.minimum(lo, x, out=lo)
            np.maximum(hi, x, out=hi)
            for lev, ll, below in log_levels:
                c = cross[lev]
                new = (c < 0) & ((x <= ll) if below else (x >= ll))
                c[new] = step
        s[:, d + 1] = np.exp(x)
        v[:, d + 1] = np.maximum(var, 0.0)
        fmin[:, d] = np.exp(lo)
        fmax[:, d] = np.exp(hi)
    times = np.linspace(0.0, p.T, n_steps + 1)
    return HestonPaths(p, times, s, v, fmin, fmax, seed, cross)
