"""Carrier-phase-only localization of a single-antenna UE with distributed APs.

Candidate positions come from intersecting differential-phase hyperbolas of a
few selected APs; the maximum-likelihood cost over all APs then picks one and
a local descent refines it.
"""
from .channel import Observation, observe
from .estimators import PhaseLocalizer
from .fim import FisherResult, efim_position, full_fim
from .mle import CostField, egs_estimate, refine_gd
from .pipeline import EstimateReport, PipelineConfig, polo1_estimate, polo2_estimate
from .scenario import Scenario, SeededRng, default_scenario, grid_scenario
from .selection import QuadChoice, TripletChoice, select_polo2, select_strategy1, select_strategy2

__version__ = "0.1.0"

__all__ = [
    "CostField", "EstimateReport", "FisherResult", "Observation", "PhaseLocalizer",
    "PipelineConfig", "QuadChoice", "Scenario", "SeededRng", "TripletChoice",
    "default_scenario", "efim_position", "egs_estimate", "full_fim", "grid_scenario",
    "observe", "polo1_estimate", "polo2_estimate", "refine_gd", "select_polo2",
    "select_strategy1", "select_strategy2",
]
