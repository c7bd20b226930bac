"""Command-line interface: bounds, hedge plans, embedding checks, simulations, type maps, envelopes.

Every command prints a JSON document (and writes it to ``--out`` when given)
that embeds the run configuration and the package version.  Module errors
exit with status 1 and a JSON error object on stderr; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import subprocess
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .barycentre import BarrierPair, kappa_from, psi, rho_minus, rho_plus, theta
from .bounds import compute_bounds, lower_bound, upper_bound
from .errors import RobustBarrierError
from .market_input import CallCurve, build_call_curve, load_quotes

THREADS_ENV = "ROBUST_BARRIERS_THREADS"


class UsageError(Exception):
    """Bad flag combination detected after argparse accepted the syntax."""


def version_string() -> str:
    """git-describe of the source tree when available, else the installed version."""
    try:
        from importlib.metadata import version

        base = version("artifact")
    except Exception:
        base = "0+unknown"
    try:
        here = Path(__file__).resolve().parent
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{base}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


@dataclass
class RunConfig:
    command: str
    inputs: dict = field(default_factory=dict)
    barriers: list = field(default_factory=list)
    seed: int | None = None
    tolerances: dict = field(default_factory=dict)
    output_dir: str | None = None
    threads: int = 1

    STOCHASTIC = ("verify-embedding", "simulate")

    def validate(self) -> "RunConfig":
        if self.command in self.STOCHASTIC and self.seed is None:
            raise UsageError(f"{self.command} needs --seed")
        for path in self.inputs.get("files", []):
            if not Path(path).exists():
                raise UsageError(f"input file {path} does not exist")
        for lb, ub in self.barriers:
            if not 0 < lb < ub:
                raise UsageError(f"invalid barriers {lb}/{ub}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# JSON helpers
# ---------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _emit(doc: dict, cfg: RunConfig, out: str | None) -> dict:
    doc = {"version": version_string(), "config": cfg.to_dict(), **doc}
    text = json.dumps(_clean(doc), indent=2, sort_keys=False)
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    return doc


# ---------------------------------------------------------------------------
# Market input flags
# ---------------------------------------------------------------------------


def _add_market(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("market input")
    g.add_argument("--law", choices=("uniform", "lognormal", "heston", "quotes"), default="uniform",
                   help="terminal law family (default uniform)")
    g.add_argument("--support", nargs=2, type=float, metavar=("A", "B"), default=(0.0, 200.0),
                   help="support of the uniform law (default 0 200)")
    g.add_argument("--spot", type=float, default=100.0, help="spot price S0 (default 100)")
    g.add_argument("--sigma", type=float, default=0.2, help="lognormal volatility (default 0.2)")
    g.add_argument("--k-max", type=float, default=None, help="upper end of the strike domain")
    g.add_argument("--heston", nargs="*", default=[], metavar="KEY=VALUE",
                   help="Heston parameter overrides, e.g. v0=0.5 kappa=0.6 theta=1 xi=1.3 rho=0.15 T=1")
    g.add_argument("--quotes", default=None, help="CSV (strike,price) or JSON quote file for --law quotes")


def _heston_overrides(items) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--heston expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = int(v) if k.strip() in ("steps_per_year", "substeps") else float(v)
    return out


def _curve(args) -> CallCurve:
    if args.law == "uniform":
        a, b = args.support
        return build_call_curve({"family": "uniform", "params": {"a": a, "b": b}})
    if args.law == "lognormal":
        return build_call_curve({"family": "lognormal", "params": {"sigma": args.sigma}, "S0": args.spot,
                                 "K_max": args.k_max})
    if args.law == "heston":
        params = {"s0": args.spot, **_heston_overrides(args.heston)}
        return build_call_curve({"family": "heston", "params": params, "K_max": args.k_max})
    if not args.quotes:
        raise UsageError("--law quotes needs --quotes FILE")
    return build_call_curve(load_quotes(args.quotes, args.spot))


def _market_inputs(args) -> dict:
    d = {"law": args.law, "spot": args.spot}
    if args.law == "uniform":
        d["support"] = list(args.support)
    elif args.law == "lognormal":
        d["sigma"] = args.sigma
    elif args.law == "heston":
        d["heston"] = _heston_overrides(args.heston)
    if args.k_max is not None:
        d["k_max"] = args.k_max
    if args.quotes:
        d["files"] = [args.quotes]
    return d


def _barriers(values) -> BarrierPair:
    lo, hi = sorted(float(v) for v in values)
    return BarrierPair(lo, hi)


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _config(args, command: str, barriers=(), seed=None, tolerances=None) -> RunConfig:
    return RunConfig(command, _market_inputs(args) if hasattr(args, "law") else {},
                     [[b.lb, b.ub] for b in barriers], seed, tolerances or {},
                     getattr(args, "out_dir", None) or (str(Path(args.out).parent) if getattr(args, "out", None) else None),
                     _threads()).validate()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _quote_set(args, curve: CallCurve):
    from .finite_strikes import QuoteSet

    if args.quotes and args.law != "quotes":
        return QuoteSet.from_table(load_quotes(args.quotes, curve.spot))
    if args.law == "quotes":
        return QuoteSet.from_table(load_quotes(args.quotes, curve.spot))
    lo, hi = args.quote_range
    strikes = np.linspace(lo, hi, args.n_quotes + 1)[1:]
    return QuoteSet.sample(curve, strikes)


def _geometry(curve: CallCurve, bar: BarrierPair) -> dict:
    law = curve.law
    s0 = curve.spot
    psi_s0 = float(np.asarray(psi(law, bar, s0)).reshape(-1)[0])
    theta_s0 = float(np.asarray(theta(law, bar, s0)).reshape(-1)[0])
    return {
        "rho_minus_0": float(np.asarray(rho_minus(law, bar.lb, 0.0)).reshape(-1)[0]),
        "rho_plus_inf": float(np.asarray(rho_plus(law, bar.ub, math.inf)).reshape(-1)[0]),
        "psi_S0": psi_s0,
        "theta_S0": theta_s0,
        "kappa_S0": float(np.asarray(kappa_from(bar, psi_s0, theta_s0)).reshape(-1)[0]),
    }


def cmd_bounds(args) -> int:
    bar = _barriers(args.barriers)
    cfg = _config(args, "bounds", [bar], tolerances={"check": not args.no_check})
    curve = _curve(args)
    doc: dict = {"barriers": [bar.lb, bar.ub]}
    if args.finite:
        from .finite_strikes import finite_bounds

        qs = _quote_set(args, curve)
        res = finite_bounds(qs, bar, completion=None if args.law == "quotes" else curve)
        doc["n_quotes"] = int(qs.n)
    else:
        res = compute_bounds(curve, bar, check=not args.no_check)
    doc["upper"] = res["upper"].to_dict()
    doc["lower"] = res["lower"].to_dict()
    if args.dump_geometry:
        doc["geometry"] = _geometry(curve, bar)
    _emit(doc, cfg, args.out)
    return 0


def cmd_hedge_plan(args) -> int:
    bar = _barriers(args.barriers)
    cfg = _config(args, "hedge-plan", [bar])
    curve = _curve(args)
    doc: dict = {"barriers": [bar.lb, bar.ub]}
    if args.side in ("upper", "both"):
        ub = upper_bound(curve, bar, check=not args.no_check)
        doc["superhedge"] = {"case": ub.case, "cost": ub.value, **ub.blueprint.to_dict()}
    if args.side in ("lower", "both"):
        lb = lower_bound(curve, bar, check=not args.no_check)
        doc["subhedge"] = {"case": lb.case, "cost": lb.value, **lb.blueprint.to_dict()}
    _emit(doc, cfg, args.out)
    return 0


def cmd_verify_embedding(args) -> int:
    from .embedding import build_lower_extremal, build_upper_extremal, verify_tightness

    bar = _barriers(args.barriers)
    cfg = _config(args, "verify-embedding", [bar], seed=args.seed, tolerances={"dt": args.dt})
    curve = _curve(args)
    doc: dict = {"barriers": [bar.lb, bar.ub]}
    sides = ("upper", "lower") if args.side == "both" else (args.side,)
    for side in sides:
        if side == "upper":
            bound = upper_bound(curve, bar, check=False)
            model = build_upper_extremal(curve.law, bar)
        else:
            bound = lower_bound(curve, bar, check=False)
            model = build_lower_extremal(curve.law, bar)
        res = verify_tightness(model, bound, n_paths=args.paths, seed=args.seed, dt=args.dt)
        doc[side] = {"case": bound.case, **res}
    _emit(doc, cfg, args.out)
    return 0 if all(doc[s]["pass"] for s in sides) else 1


def cmd_simulate(args) -> int:
    from .hedging_sim import (CostSpec, DeltaVegaConfig, HestonParams, compare_utilities, heston_call_curve,
                              heston_paths, run_delta_vega, run_quasi_static, utility_report)

    bar = _barriers(args.barriers)
    cfg = _config(args, "simulate", [bar], seed=args.seed,
                  tolerances={"bootstrap": args.bootstrap, "costs": list(args.costs)})
    params = HestonParams(**{"s0": args.spot, **_heston_overrides(args.heston)})
    curve = heston_call_curve(params)
    paths = heston_paths(params, args.paths, seed=args.seed, levels=(bar.lb, bar.ub))
    costs = CostSpec(*args.costs)
    hedges = args.hedge or (["superhedge", "deltavega"] if args.position == "short" else ["subhedge", "deltavega"])
    ledgers = []
    for h in hedges:
        if h == "deltavega":
            led = run_delta_vega(paths, bar, costs, DeltaVegaConfig(monitoring=args.monitoring),
                                 position=args.position, premium=args.premium)
        else:
            bound = upper_bound(curve, bar, check=False) if h == "superhedge" else lower_bound(curve, bar, check=False)
            led = run_quasi_static(bound.blueprint, paths, curve, costs, args.monitoring, args.position,
                                   premium=args.premium, label=f"{args.position} {h} ({bound.case})")
        ledgers.append(led)
    rows = utility_report(ledgers, n_boot=args.bootstrap, seed=args.seed)
    doc: dict = {
        "barriers": [bar.lb, bar.ub],
        "utilities": [r.to_dict() for r in rows],
        "ledgers": [led.summary() for led in ledgers],
    }
    if len(ledgers) == 2:
        doc["paired"] = compare_utilities(ledgers[0], ledgers[1], n_boot=args.bootstrap, seed=args.seed)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for h, led in zip(hedges, ledgers):
            led.write_csv(out / f"errors_{args.position}_{h}.csv")
    print(render_report(rows), file=sys.stderr)
    _emit(doc, cfg, str(Path(args.out_dir) / "utilities.json") if args.out_dir else None)
    return 0


def cmd_typemap(args) -> int:
    from .hedging_sim import type_map

    cfg = _config(args, "typemap")
    curve = _curve(args)
    lbs = np.linspace(*args.lb_range[:2], int(args.lb_range[2]))
    ubs = np.linspace(*args.ub_range[:2], int(args.ub_range[2]))
    quotes = _quote_set(args, curve) if args.finite else None
    tm = type_map(curve, lbs, ubs, quotes=quotes, on_error="mark" if args.mark_ambiguous else "raise")
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        tm.write_csv(args.csv)
    doc = {
        "lbs": tm.lbs, "ubs": tm.ubs,
        "upper_labels": sorted(tm.labels("upper")), "lower_labels": sorted(tm.labels("lower")),
        "cells": [list(r) for r in tm.rows()],
    }
    _emit(doc, cfg, args.out)
    return 0


def cmd_envelope(args) -> int:
    from .finite_strikes import price_envelope

    cfg = _config(args, "envelope")
    curve = _curve(args)
    qs = _quote_set(args, curve)
    ks = np.asarray(args.strikes, dtype=float) if args.strikes else np.linspace(*args.grid[:2], int(args.grid[2]))
    lo, hi = price_envelope(qs, ks)
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        with open(args.csv, "w") as fh:
            fh.write("strike,lower,upper\n")
            for k, a, b in zip(ks, lo, hi):
                fh.write(f"{k!r},{float(a)!r},{float(b)!r}\n")
    _emit({"strikes": ks, "lower": lo, "upper": hi, "n_quotes": int(qs.n)}, cfg, args.out)
    return 0


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------


def _fmt(x, width: int = 9, prec: int = 4) -> str:
    if x is None or not isinstance(x, (int, float)) or not math.isfinite(x):
        return "n/a".rjust(width)
    return f"{x:{width}.{prec}f}"


def render_report(rows) -> str:
    """Fixed-width utility table; the preferred hedge is marked with '*'."""
    header = f"{'hedge':<34} {'utility':>9} {'90% CI':>21} {'mean err':>9} {'paths':>7}  pref"
    lines = [header, "-" * len(header)]
    for r in rows:
        d = r.to_dict() if hasattr(r, "to_dict") else dict(r)
        vals = (d.get("utility"), d.get("ci_low"), d.get("ci_high"), d.get("mean_error"))
        if any(v is None or not math.isfinite(v) for v in vals):
            warnings.warn(f"non-finite utility statistics for {d.get('label')!r}", RuntimeWarning, stacklevel=2)
        ci = f"[{_fmt(d.get('ci_low'))}, {_fmt(d.get('ci_high'))}]"
        lines.append(f"{str(d.get('label')):<34} {_fmt(d.get('utility'))} {ci:>21} {_fmt(d.get('mean_error'))} "
                     f"{int(d.get('n_paths', 0)):>7}  {'*' if d.get('preferred') else ''}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage_error", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robust-barriers", description="Model-free bounds and hedges for double touch digitals.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def barriers(q, required=True):
        q.add_argument("--barriers", nargs=2, type=float, metavar=("LB", "UB"), required=required,
                       help="barrier levels (either order)")

    def out(q):
        q.add_argument("--out", default=None, help="also write the JSON result to this file")

    def finite(q):
        q.add_argument("--n-quotes", type=int, default=1000, help="quotes sampled from the curve (default 1000)")
        q.add_argument("--quote-range", nargs=2, type=float, default=(0.0, 500.0), metavar=("LO", "HI"),
                       help="strike range of sampled quotes (default 0 500)")

    q = sub.add_parser("bounds", help="model-free upper and lower prices")
    _add_market(q)
    barriers(q)
    q.add_argument("--finite", action="store_true", help="use finitely many traded strikes")
    finite(q)
    q.add_argument("--no-check", action="store_true", help="skip the brute-force dominance check")
    q.add_argument("--dump-geometry", action="store_true", help="include barycentre geometry at S0")
    out(q)
    q.set_defaults(func=cmd_bounds)

    q = sub.add_parser("hedge-plan", help="super- and subhedge portfolios")
    _add_market(q)
    barriers(q)
    q.add_argument("--side", choices=("upper", "lower", "both"), default="both", help="which hedge(s)")
    q.add_argument("--no-check", action="store_true", help="skip the brute-force dominance check")
    out(q)
    q.set_defaults(func=cmd_hedge_plan)

    q = sub.add_parser("verify-embedding", help="simulate the extremal models and compare with the bounds")
    _add_market(q)
    barriers(q)
    q.add_argument("--side", choices=("upper", "lower", "both"), default="both", help="which extremal model(s)")
    q.add_argument("--paths", type=int, default=100_000, help="Monte Carlo paths (default 1e5)")
    q.add_argument("--seed", type=int, default=None, help="random seed (required)")
    q.add_argument("--dt", type=float, default=1e-5, help="time step of the ladder simulator (default 1e-5)")
    out(q)
    q.set_defaults(func=cmd_verify_embedding)

    q = sub.add_parser("simulate", help="hedge the double touch on Heston paths")
    barriers(q)
    q.add_argument("--spot", type=float, default=100.0, help="spot price S0 (default 100)")
    q.add_argument("--heston", nargs="*", default=[], metavar="KEY=VALUE", help="Heston parameter overrides")
    q.add_argument("--position", choices=("short", "long"), default="short", help="side of the double touch")
    q.add_argument("--hedge", choices=("superhedge", "subhedge", "deltavega"), action="append", default=None,
                   help="hedge(s) to run; repeatable (default: the model-free hedge for the position and deltavega)")
    q.add_argument("--monitoring", choices=("daily", "exact"), default="daily", help="barrier monitoring")
    q.add_argument("--paths", type=int, default=5000, help="number of paths (default 5000)")
    q.add_argument("--seed", type=int, default=None, help="random seed (required)")
    q.add_argument("--costs", nargs=2, type=float, default=(0.005, 0.01), metavar=("UNDERLYING", "OPTION"),
                   help="proportional transaction costs (default 0.005 0.01)")
    q.add_argument("--premium", type=float, default=None, help="option premium (default: Monte Carlo fair value)")
    q.add_argument("--bootstrap", type=int, default=1000, help="bootstrap resamples (default 1000)")
    q.add_argument("--out-dir", default=None, help="directory for per-path error CSVs and the utility JSON")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("typemap", help="hedge case labels over a barrier grid")
    _add_market(q)
    q.add_argument("--lb-range", nargs=3, type=float, metavar=("LO", "HI", "N"), required=True,
                   help="lower-barrier grid")
    q.add_argument("--ub-range", nargs=3, type=float, metavar=("LO", "HI", "N"), required=True,
                   help="upper-barrier grid")
    q.add_argument("--finite", action="store_true", help="classify with finitely many quotes")
    finite(q)
    q.add_argument("--mark-ambiguous", action="store_true", help="label failed cells '?' instead of failing")
    q.add_argument("--csv", default=None, help="write the grid as CSV")
    out(q)
    q.set_defaults(func=cmd_typemap)

    q = sub.add_parser("envelope", help="no-arbitrage price range at unquoted strikes")
    _add_market(q)
    finite(q)
    g = q.add_mutually_exclusive_group(required=True)
    g.add_argument("--strikes", nargs="+", type=float, help="strikes to evaluate")
    g.add_argument("--grid", nargs=3, type=float, metavar=("LO", "HI", "N"), help="evenly spaced strikes")
    q.add_argument("--csv", default=None, help="write strike,lower,upper CSV")
    out(q)
    q.set_defaults(func=cmd_envelope)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except UsageError as exc:
        print(json.dumps({"error": "usage_error", "message": str(exc)}), file=sys.stderr)
        return 2
    except RobustBarrierError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
