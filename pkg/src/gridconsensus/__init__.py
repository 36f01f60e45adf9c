"""Passivity / negative-imaginary consensus control of power transmission grids."""

from .topology import Network, build_incidence, edge_inputs, node_inputs, random_connected_graph
from .generator import (
    EquilibriumSpec,
    GeneratorParams,
    decoupled_coefficients,
    derive_line_susceptances,
    consistent_equilibrium_inputs,
    equilibrium_residual,
)
from .control import AngleControllerParams, VoltageControllerParams
from .simulation import Scenario, SimConfig, Trace, compare_traces, run, run_closed_loop, run_decoupled
from .scenario import builtin_four_area, load_scenario, parse_scenario, random_scenario, serialize_scenario

__version__ = "0.1.0"
