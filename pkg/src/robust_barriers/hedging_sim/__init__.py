"""Heston market simulation, hedge backtests and hedge-type maps."""

from .fd import DoubleTouchGrid, build_double_touch_grid, one_touch_down, one_touch_up
from .hedging import (
    CostSpec,
    DeltaVegaConfig,
    Ledger,
    TypeMap,
    UtilityRow,
    compare_utilities,
    fair_value,
    path_outcome,
    run_delta_vega,
    run_quasi_static,
    type_map,
    utility_report,
)
from .heston import HestonParams, HestonPaths, atm_implied_vol, heston_call_curve, heston_call_prices, heston_paths

__all__ = [
    "CostSpec", "DeltaVegaConfig", "DoubleTouchGrid", "HestonParams", "HestonPaths", "Ledger", "TypeMap",
    "UtilityRow", "atm_implied_vol", "build_double_touch_grid", "compare_utilities", "fair_value",
    "heston_call_curve", "heston_call_prices", "heston_paths", "one_touch_down", "one_touch_up", "path_outcome",
    "run_delta_vega", "run_quasi_static", "type_map", "utility_report",
]
