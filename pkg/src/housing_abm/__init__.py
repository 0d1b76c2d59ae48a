"""Agent-based housing market simulation on graph-structured submarkets."""

__version__ = "0.1.0"

from housing_abm.behavior import BehaviorConstants, ParameterVector
from housing_abm.engine import InfeasibleScenario, World, initialize_world, run
from housing_abm.graph import RegionGraph, Topology, TopologyKind, build_graph
from housing_abm.loss import combined_loss, dtw, tdi
from housing_abm.scenario import Scenario, generate_synthetic_scenario, load_scenario, save_scenario

__all__ = [
    "BehaviorConstants",
    "InfeasibleScenario",
    "ParameterVector",
    "RegionGraph",
    "Scenario",
    "Topology",
    "TopologyKind",
    "World",
    "build_graph",
    "combined_loss",
    "dtw",
    "generate_synthetic_scenario",
    "initialize_world",
    "load_scenario",
    "run",
    "save_scenario",
    "tdi",
]
