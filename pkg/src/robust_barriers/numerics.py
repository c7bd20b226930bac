"""Small numerical helpers shared across modules."""

from __future__ import annotations

from typing import Callable

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]


def bracketed_root(
    f: ArrayFn,
    lo,
    hi,
    xtol: float = 1e-12,
    ftol: float = 0.0,
    maxiter: int = 200,
) -> np.ndarray:
    """Vectorised bracketing root finder.

    Each element of ``lo``/``hi`` must bracket a sign change of ``f`` (a zero
    at an endpoint is accepted).  Steps are Illinois-modified false position;
    whenever the bracket has not halved over two iterations a bisection step
    is forced, so the bracket shrinks at least as fast as plain bisection
    every other step.  ``f`` is always evaluated on the full array.
    """
    a, b = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    a = a.copy()
    b = b.copy()
    fa = np.asarray(f(a), dtype=float).copy()
    fb = np.asarray(f(b), dtype=float).copy()
    # orient so that g(a) <= 0 <= g(b)
    sign = np.where(fa <= fb, 1.0, -1.0)
    ga = sign * fa
    gb = sign * fb
    exact = np.full(a.shape, np.nan)
    exact = np.where(ga == 0, a, exact)
    exact = np.where(np.isnan(exact) & (gb == 0), b, exact)
    last_side = np.zeros(a.shape, dtype=int)
    prev_width = np.full(a.shape, np.inf)
    slow = np.zeros(a.shape, dtype=bool)
    for _ in range(maxiter):
        width = b - a
        done = (~np.isnan(exact)) | (width <= xtol) | (np.minimum(-ga, gb) <= ftol)
        if done.all():
            break
        denom = gb - ga
        with np.errstate(divide="ignore", invalid="ignore"):
            fp = a - ga * width / denom
        bisect = slow | ~np.isfinite(fp) | (fp <= a) | (fp >= b)
        c = np.where(bisect, 0.5 * (a + b), fp)
        gc = sign * np.asarray(f(c), dtype=float)
        upd = ~done
        hit = upd & (gc == 0)
        exact = np.where(hit, c, exact)
        left = upd & (gc < 0)
        right = upd & (gc > 0)
        # Illinois: halve the retained endpoint value when a side repeats
        gb = np.where(left & (last_side == -1), 0.5 * gb, gb)
        ga = np.where(right & (last_side == 1), 0.5 * ga, ga)
        a = np.where(left, c, a)
        ga = np.where(left, gc, ga)
        b = np.where(right, c, b)
        gb = np.where(right, gc, gb)
        last_side = np.where(left, -1, np.where(right, 1, last_side))
        new_width = b - a
        slow = new_width > 0.5 * prev_width
        prev_width = np.where(upd, width, prev_width)
    out = np.where(np.abs(ga) <= np.abs(gb), a, b)
    # report the bracket midpoint once it is tight, otherwise the better end
    out = np.where(b - a <= xtol, 0.5 * (a + b), out)
    return np.where(np.isnan(exact), out, exact)


def scalar(x) -> float:
    """Convert a size-one array (or scalar) to a Python float."""
    return float(np.asarray(x, dtype=float).reshape(-1)[0])
