"""Cyclostationary low-rank travel-time prediction and regret evaluation for road networks."""
from .core import DAY, WEEK, ODQuery, RoadNetwork, TimeGrid, TrafficMatrix
from .errors import CycloTrafficError
from .lowrank import SpatialBasis, mdl_order, truncated_svd, welch_psd
from .predictors import CycleConfig, CycloPredictor, LagPredictor, fit_cyclo
from .routing import dijkstra, greedy_reroute, static_oracle

__version__ = "0.1.0"

__all__ = [
    "DAY", "WEEK", "CycleConfig", "CycloPredictor", "CycloTrafficError", "LagPredictor",
    "ODQuery", "RoadNetwork", "SpatialBasis", "TimeGrid", "TrafficMatrix", "dijkstra",
    "fit_cyclo", "greedy_reroute", "mdl_order", "static_oracle", "truncated_svd", "welch_psd",
]
