"""Home battery dispatch as a linear program, with KKT certification,
simultaneous charge/discharge repair and a brute-force reference solver."""
from __future__ import annotations

from .kkt import KktReport, Regime, certificate_of_suboptimality, check, classify_regime
from .model import (DecisionTrajectory, EssParams, ExogenousProfile, Tariff, check_feasible,
                    cost, simultaneity_index, soc_trajectory)
from .oracle import GridSpec, enumerate_grid
from .problem import build_lp, extract_trajectory
from .repair import repair_until_clean
from .solver import SolveOptions, SolveOutcome, Status, solve

__all__ = [
    "DecisionTrajectory", "EssParams", "ExogenousProfile", "GridSpec", "KktReport", "Regime",
    "SolveOptions", "SolveOutcome", "Status", "Tariff", "build_lp", "certificate_of_suboptimality",
    "check", "check_feasible", "classify_regime", "cost", "enumerate_grid", "extract_trajectory",
    "repair_until_clean", "simultaneity_index", "soc_trajectory", "solve",
]
__version__ = "0.1.0"
