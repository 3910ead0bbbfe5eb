"""Cooperative random access for machine-type devices: coalition formation, a centralized benchmark and a slot simulator."""

from .channel import Topology
from .engine import RunMetrics, run_scenario, simulate
from .formation import check_stable, delta_threshold, run_formation
from .model import SystemConfig, load_config
from .optimizer import Assignment, exhaustive_search, ga_search

__all__ = [
    "Assignment",
    "RunMetrics",
    "SystemConfig",
    "Topology",
    "check_stable",
    "delta_threshold",
    "exhaustive_search",
    "ga_search",
    "load_config",
    "run_formation",
    "run_scenario",
    "simulate",
]
