"""Black-Scholes double-touch pricing for the delta/vega benchmark (zero rates)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from ..errors import GridUnstable


def one_touch_up(s, barrier, tau, sigma):
    """P(max of S over the next tau reaches barrier), barrier above s."""
    s = np.asarray(s, dtype=float)
    tau = np.asarray(tau, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    sd = sigma * np.sqrt(np.maximum(tau, 0.0))
    b = np.log(barrier / np.maximum(s, 1e-300))
    nu = -0.5 * sigma * sigma * tau
    with np.errstate(divide="ignore", invalid="ignore"):
        p = special.ndtr((-b + nu) / sd) + np.exp(-b) * special.ndtr((-b - nu) / sd)
    p = np.where(sd > 0, p, 0.0)
    return np.where(b <= 0, 1.0, p)


def one_touch_down(s, barrier, tau, sigma):
    """P(min of S over the next tau reaches barrier), barrier below s."""
    s = np.asarray(s, dtype=float)
    tau = np.asarray(tau, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    sd = sigma * np.sqrt(np.maximum(tau, 0.0))
    a = np.log(np.maximum(s, 1e-300) / barrier)
    nu = -0.5 * sigma * sigma * tau
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        p = special.ndtr((-a - nu) / sd) + np.exp(a) * special.ndtr((-a + nu) / sd)
    p = np.where(sd > 0, p, 0.0)
    return np.where(a <= 0, 1.0, np.minimum(p, 1.0))


@dataclass
class DoubleTouchGrid:
    """Untouched-state double-touch values on (sigma, day, log-price) nodes."""

    lb: float
    ub: float
    sigmas: np.ndarray
    taus: np.ndarray  # time to maturity per day index, decreasing
    x: np.ndarray
    values: np.ndarray  # (n_sigma, n_days, n_x)

    def _interp(self, day: int, s, sigma):
        s = np.asarray(s, dtype=float)
        sigma = np.clip(np.asarray(sigma, dtype=float), self.sigmas[0], self.sigmas[-1])
        xi = np.clip(np.log(s), self.x[0], self.x[-1])
        j = np.clip(np.searchsorted(self.sigmas, sigma, side="right") - 1, 0, self.sigmas.size - 2)
        w = (sigma - self.sigmas[j]) / (self.sigmas[j + 1] - self.sigmas[j])
        dx = self.x[1] - self.x[0]
        k = np.clip(((xi - self.x[0]) / dx).astype(int), 0, self.x.size - 2)
        t = (xi - self.x[k]) / dx
        v = self.values[:, day, :]
        lo = (1 - t) * v[j, k] + t * v[j, k + 1]
        hi = (1 - t) * v[j + 1, k] + t * v[j + 1, k + 1]
        return (1 - w) * lo + w * hi

    def price(self, day: int, s, sigma):
        return self._interp(day, s, sigma)

    def delta(self, day: int, s, sigma):
        s = np.asarray(s, dtype=float)
        h = 1e-3 * s
        up = np.minimum(s + h, self.ub)
        dn = np.maximum(s - h, self.lb)
        return (self._interp(day, up, sigma) - self._interp(day, dn, sigma)) / (up - dn)

    def vega(self, day: int, s, sigma):
        sigma = np.asarray(sigma, dtype=float)
        h = 1e-2
        a = np.clip(sigma - h, self.sigmas[0], self.sigmas[-1])
        b = np.clip(sigma + h, self.sigmas[0], self.sigmas[-1])
        return (self._interp(day, s, b) - self._interp(day, s, a)) / np.maximum(b - a, 1e-12)


def build_double_touch_grid(lb: float, ub: float, horizon: float, n_days: int, sigmas=None,
                            n_x: int = 400, steps_per_day: int = 2, rannacher: int = 4) -> DoubleTouchGrid:
    """Crank-Nicolson in log-price with one-touch values on the two barriers.

    V_tau = sigma^2 / 2 (V_xx - V_x) on (log lb, log ub), V = 0 at maturity,
    V(lb) = P(reach ub), V(ub) = P(reach lb).  A few implicit Euler steps at
    the start damp the corner mismatch.
    """
    if sigmas is None:
        sigmas = np.exp(np.linspace(math.log(0.05), math.log(4.0), 40))
    sigmas = np.asarray(sigmas, dtype=float)
    x = np.linspace(math.log(lb), math.log(ub), n_x + 1)
    dx = x[1] - x[0]
    dt = horizon / n_days / steps_per_day
    taus = horizon - np.linspace(0.0, horizon, n_days + 1)
    values = np.zeros((sigmas.size, n_days + 1, x.size))
    m = x.size - 2
    for i, sig in enumerate(sigmas):
        a = 0.5 * sig * sig
        lower = a * (1 / dx**2 + 0.5 / dx)  # coefficient of V_{j-1}
        upper = a * (1 / dx**2 - 0.5 / dx)  # coefficient of V_{j+1}
        diag = -2 * a / dx**2
        v = np.zeros(x.size)
        values[i, n_days] = v
        tau = 0.0
        step = 0
        for day in range(n_days - 1, -1, -1):
            for _ in range(steps_per_day):
                theta = 1.0 if step < rannacher else 0.5
                tau_new = tau + dt
                bl = float(one_touch_up(lb, ub, tau_new, sig))
                bu = float(one_touch_down(ub, lb, tau_new, sig))
                ab = np.zeros((3, m))
                ab[0, 1:] = -theta * dt * upper
                ab[1, :] = 1 - theta * dt * diag
                ab[2, :-1] = -theta * dt * lower
                inner = v[1:-1]
                rhs = inner + (1 - theta) * dt * (lower * v[:-2] + diag * inner + upper * v[2:])
                rhs[0] += theta * dt * lower * bl
                rhs[-1] += theta * dt * upper * bu
                v = np.concatenate([[bl], linalg.solve_banded((1, 1), ab, rhs), [bu]])
                tau = tau_new
                step += 1
            values[i, day] = v
        if not np.all(np.isfinite(v)) or v.min() < -1e-6 or v.max() > 1 + 1e-6:
            raise GridUnstable(f"double-touch grid left [0, 1] at sigma={sig:.4g}")
    return DoubleTouchGrid(lb, ub, sigmas, taus, x, np.clip(values, 0.0, 1.0))
