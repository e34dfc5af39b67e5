"""Network-aware carbon accounting on DC power flow models.

The package traces emissions through a meshed grid the same way power flows
through it, attributes them to generators, loads, storage and the grid owner,
quantifies the consequences of operational changes (CEF, MEF), and runs a
carbon-aware optimal dispatch that exposes locational prices.
"""

from .accounting import (EmissionRecord, EmissionReport, aggregate_horizon,
                         area_average_report, attribute_emissions,
                         avoided_emissions_report, compute_aef)
from .consequential import (CefResult, MefResult, Perturbation,
                            PerturbationKind, apply_perturbation, compute_cef,
                            compute_mef, dispatch_network_constrained)
from .copf import (CopfProblem, DispatchResult, NodalPrices, extract_prices,
                   flow_solution_from_dispatch, solve_copf_cost_adder,
                   solve_copf_intensity_capped)
from .dcflow import (ExtraLoad, ExtraSource, FlowSolution, PtdfMatrix,
                     apply_losses, check_flow_consistency, compute_ptdf,
                     oriented_edges, solve_dc_power_flow)
from .errors import (BalanceInfeasible, CapacityViolated, CarbonFlowError,
                     Infeasible, InfeasibleContract, InfeasibleSchedule,
                     InvalidNetwork, MixedMethods, NegativeLoad, NotConverged,
                     ParseError, PowerLimitViolated, SchemaError,
                     SingularSystem, UnboundedProblem, UnknownColumn,
                     UnknownId, ValidationFailed, ZeroDelta, ZeroGeneration)
from .gridio import (RunConfig, TimeSeries, fixture_path, load_grid,
                     load_timeseries, save_grid, write_manifest,
                     write_report_csv, write_report_json)
from .lp import LpSolution, RevisedSimplex, ScipyLinprogSolver
from .model import (Bus, Generator, Line, Load, Network, Snapshot,
                    StorageModel, StorageUnit, ValidationReport, Violation,
                    validate_network, with_generator_gef)
from .storage import (HorizonResult, StorageState, discharge_intensity,
                      simulate_horizon, step_clean_gen_model, step_water_tank)
from .tracing import (CarbonFlowSolution, Contract, DeliverabilityVerdict,
                      MixingRule, check_deliverability, solve_carbon_flow,
                      solve_carbon_flow_acyclic)

__version__ = "0.1.0"

__all__ = [
    "Bus", "Line", "Generator", "Load", "StorageUnit", "StorageModel",
    "Network", "Snapshot", "Violation", "ValidationReport",
    "validate_network", "with_generator_gef",
    "FlowSolution", "ExtraSource", "ExtraLoad", "PtdfMatrix",
    "solve_dc_power_flow", "apply_losses", "compute_ptdf", "oriented_edges",
    "check_flow_consistency",
    "Contract", "MixingRule", "CarbonFlowSolution", "DeliverabilityVerdict",
    "solve_carbon_flow", "solve_carbon_flow_acyclic", "check_deliverability",
    "EmissionRecord", "EmissionReport", "compute_aef", "attribute_emissions",
    "area_average_report", "avoided_emissions_report", "aggregate_horizon",
    "Perturbation", "PerturbationKind", "CefResult", "MefResult",
    "compute_cef", "compute_mef", "apply_perturbation",
    "dispatch_network_constrained",
    "CopfProblem", "DispatchResult", "NodalPrices", "solve_copf_cost_adder",
    "solve_copf_intensity_capped", "extract_prices",
    "flow_solution_from_dispatch",
    "StorageState", "HorizonResult", "step_water_tank", "step_clean_gen_model",
    "discharge_intensity", "simulate_horizon",
    "RunConfig", "TimeSeries", "load_grid", "save_grid", "load_timeseries",
    "write_report_csv", "write_report_json", "write_manifest", "fixture_path",
    "LpSolution", "RevisedSimplex", "ScipyLinprogSolver",
    "CarbonFlowError", "InvalidNetwork", "UnknownId", "SingularSystem",
    "BalanceInfeasible", "InfeasibleContract", "ZeroGeneration",
    "MixedMethods", "Infeasible", "UnboundedProblem", "ZeroDelta",
    "NotConverged", "CapacityViolated", "PowerLimitViolated",
    "InfeasibleSchedule", "ParseError", "SchemaError", "ValidationFailed",
    "UnknownColumn", "NegativeLoad",
    "__version__",
]
