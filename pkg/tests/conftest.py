from __future__ import annotations

import pytest

from robust_barriers.barycentre import BarrierPair
from robust_barriers.market_input import CallCurve, UniformLaw


@pytest.fixture(scope="session")
def uniform_law():
    return UniformLaw(0.0, 200.0)


@pytest.fixture(scope="session")
def uniform_curve(uniform_law):
    return CallCurve(uniform_law, "analytic-uniform-terminal", 100.0)


@pytest.fixture(scope="session")
def golden_barriers():
    return BarrierPair(83.0, 117.0)


def _sample_completions(strikes, prices, spot, n, rng):
    """Random convex call curves through the quotes, as callables on [x_0, x_N].

    At each quote a subgradient is drawn between the neighbouring chord
    slopes (with -1 before the first quote and 0 after the last); inside a
    gap the curve is the upper envelope of the two tangent lines.
    """
    import numpy as np

    x = np.asarray(strikes, dtype=float)
    c = np.asarray(prices, dtype=float)
    s = np.diff(c) / np.diff(x)
    left = np.concatenate([[-1.0], s])
    right = np.concatenate([s, [0.0]])
    out = []
    for _ in range(n):
        t = left + (right - left) * rng.random(x.size)

        def curve(k, t=t):
            k = np.asarray(k, dtype=float)
            j = np.clip(np.searchsorted(x, k, side="right") - 1, 0, x.size - 2)
            return np.maximum(c[j] + t[j] * (k - x[j]), c[j + 1] + t[j + 1] * (k - x[j + 1]))

        out.append(curve)
    return out


@pytest.fixture(scope="session")
def completion_sampler():
    return _sample_completions


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion."""

    def log(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
