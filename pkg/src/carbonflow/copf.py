"""Carbon-aware optimal dispatch over the DC network, with nodal prices.

The base problem minimizes sum_k (marginal_cost_k + carbon_price * GEF_k) * g_k
subject to DC power balance, line capacities and generator limits (lossless).
Nodal prices come straight from the balance-row duals: with carbon_price = 0
they are ordinary LMPs, with a positive price they are carbon-adjusted LMPs.
Nodal intensity caps are nonlinear in the dispatch (the mixing system sits in
between), so they are enforced by successive linearization: trace the current
dispatch, freeze the upstream intensities, and cut off the violating corner
with "carbon inflow <= cap x power throughflow" written as a linear row.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from . import lp as lp_mod
from .dcflow import FLOW_EPS_MW, FlowSolution, compute_ptdf
from .errors import Infeasible, NotConverged, UnknownId
from .model import Network, Snapshot, require_valid
from .tracing import CarbonFlowSolution, MixingRule, solve_carbon_flow

_BINDING_TOL = 1e-6
_CAP_TOL = 1e-6


@dataclass(frozen=True)
class CopfProblem:
    network: Network
    snapshot: Snapshot
    carbon_price: float = 0.0
    nodal_intensity_caps: Mapping[str, float] = field(default_factory=dict)
    total_emission_cap: Optional[float] = None
    power_cost_weight: float = 1.0

    def __post_init__(self):
        if self.carbon_price < 0.0:
            raise ValueError("carbon_price must be >= 0")
        object.__setattr__(self, "nodal_intensity_caps",
                           dict(self.nodal_intensity_caps))


@dataclass(frozen=True)
class IterationEntry:
    iteration: int
    objective: float
    max_violation: float
    violated_buses: Tuple[str, ...]


@dataclass(frozen=True)
class DispatchResult:
    setpoints: Mapping[str, float]
    line_flows: Mapping[str, float]
    objective: float
    dual_objective: float
    total_cost: float
    total_emissions: float
    lmp: Mapping[str, float]
    congestion_duals: Mapping[str, float]
    binding_lines: Tuple[str, ...]
    emission_cap_dual: Optional[float] = None
    iterations: Tuple[IterationEntry, ...] = ()
    dual_degenerate: bool = False


@dataclass(frozen=True)
class NodalPrices:
    lmp: Mapping[str, float]
    energy_component: float
    congestion_component: Mapping[str, float]


def _resolve_boundary(network: Network, snapshot: Snapshot):
    """Net withdrawal per bus (load minus imports), with defaulted demands."""
    load_mw = {}
    for lid, mw in snapshot.load_mw.items():
        if lid not in network.loads_by_id:
            raise UnknownId(f"unknown load {lid!r} in snapshot")
        load_mw[lid] = float(mw)
    for l in network.loads:
        load_mw.setdefault(l.id, l.demand_mw)
    imports = {}
    if snapshot.import_injections:
        for bus, (mw, w) in snapshot.import_injections.items():
            if bus not in network.bus_index:
                raise UnknownId(f"unknown bus {bus!r} in import injections")
            imports[bus] = (float(mw), float(w))
    net_withdrawal = {b: 0.0 for b in network.bus_ids}
    for l in network.loads:
        net_withdrawal[l.bus] += load_mw[l.id]
    for bus, (mw, _w) in imports.items():
        net_withdrawal[bus] -= mw
    return load_mw, imports, net_withdrawal


def _build_lp(problem: CopfProblem, extra_rows=()):
    """Variables: generator setpoints (sorted id), then scaled angles for every
    non-slack bus. Returns the LP pieces plus the index maps needed to read
    primal values and duals back out."""
    net = problem.network
    gens = [net.generators_by_id[g] for g in net.generator_ids]
    phi_buses = [b for b in net.bus_ids if b != net.slack_bus]
    n_g = len(gens)
    n_x = n_g + len(phi_buses)
    gpos = {g.id: i for i, g in enumerate(gens)}
    ppos = {b: n_g + i for i, b in enumerate(phi_buses)}

    c = np.zeros(n_x)
    bounds = []
    for i, g in enumerate(gens):
        c[i] = problem.power_cost_weight * g.marginal_cost + problem.carbon_price * g.gef
        bounds.append((g.p_min, g.p_max))
    bounds.extend([(None, None)] * len(phi_buses))

    _load_mw, _imports, net_withdrawal = _resolve_boundary(net, problem.snapshot)
    a_eq = np.zeros((len(net.bus_ids), n_x))
    b_eq = np.zeros(len(net.bus_ids))
    brow = {b: i for i, b in enumerate(net.bus_ids)}
    for g in gens:
        a_eq[brow[g.bus], gpos[g.id]] = 1.0
    for line in net.lines:
        k = 1.0 / line.reactance
        # flow = k * (phi_from - phi_to); subtract exports, add arrivals
        for bus, sgn in ((line.from_bus, -1.0), (line.to_bus, +1.0)):
            r = brow[bus]
            if line.from_bus in ppos:
                a_eq[r, ppos[line.from_bus]] += sgn * k
            if line.to_bus in ppos:
                a_eq[r, ppos[line.to_bus]] -= sgn * k
    for b in net.bus_ids:
        b_eq[brow[b]] = net_withdrawal[b]

    a_ub_rows, b_ub_vals = [], []
    cap_rows = {}  # line id -> (row upper, row lower)
    for lid in net.line_ids:
        line = net.lines_by_id[lid]
        if line.capacity_mw is None:
            continue
        row = np.zeros(n_x)
        k = 1.0 / line.reactance
        if line.from_bus in ppos:
            row[ppos[line.from_bus]] = k
        if line.to_bus in ppos:
            row[ppos[line.to_bus]] = -k
        cap_rows[lid] = (len(a_ub_rows), len(a_ub_rows) + 1)
        a_ub_rows.append(row)
        b_ub_vals.append(line.capacity_mw)
        a_ub_rows.append(-row)
        b_ub_vals.append(line.capacity_mw)

    emission_row = None
    if problem.total_emission_cap is not None:
        row = np.zeros(n_x)
        for g in gens:
            row[gpos[g.id]] = g.gef
        emission_row = len(a_ub_rows)
        a_ub_rows.append(row)
        b_ub_vals.append(problem.total_emission_cap)

    cut_start = len(a_ub_rows)
    for row, rhs in extra_rows:
        a_ub_rows.append(row)
        b_ub_vals.append(rhs)

    a_ub = np.vstack(a_ub_rows) if a_ub_rows else None
    b_ub = np.asarray(b_ub_vals) if b_ub_vals else None
    return (c, a_eq, b_eq, a_ub, b_ub, bounds,
            gens, phi_buses, gpos, ppos, brow, cap_rows, emission_row, cut_start)


def _assemble(problem: CopfProblem, sol, pieces, log=()) -> DispatchResult:
    net = problem.network
    (c, a_eq, b_eq, a_ub, b_ub, bounds, gens, phi_buses, gpos, ppos, brow,
     cap_rows, emission_row, _cut_start) = pieces
    setpoints = {}
    for g in gens:
        v = float(sol.x[gpos[g.id]])
        setpoints[g.id] = min(max(v, g.p_min), g.p_max)
    phi = {b: float(sol.x[ppos[b]]) for b in phi_buses}
    phi[net.slack_bus] = 0.0
    flows = {}
    for line in net.lines:
        flows[line.id] = (phi[line.from_bus] - phi[line.to_bus]) / line.reactance
    lmp = {b: float(sol.eq_marginals[brow[b]]) for b in net.bus_ids}
    congestion = {}
    binding = []
    for lid, (up, lo) in cap_rows.items():
        mu_up = -float(sol.ub_marginals[up])
        mu_lo = -float(sol.ub_marginals[lo])
        congestion[lid] = mu_up - mu_lo
        cap = net.lines_by_id[lid].capacity_mw
        if cap is not None and abs(flows[lid]) >= cap - _BINDING_TOL:
            binding.append(lid)
    cost = sum(net.generators_by_id[g].marginal_cost * p for g, p in setpoints.items())
    emissions = sum(net.generators_by_id[g].gef * p for g, p in setpoints.items())
    cap_dual = None
    if emission_row is not None:
        # shadow price of the cap: dollars saved per extra ton allowed
        cap_dual = -float(sol.ub_marginals[emission_row])
    return DispatchResult(
        setpoints=setpoints, line_flows=flows,
        objective=float(sol.objective), dual_objective=float(sol.dual_objective),
        total_cost=float(cost), total_emissions=float(emissions),
        lmp=lmp, congestion_duals=congestion, binding_lines=tuple(sorted(binding)),
        emission_cap_dual=cap_dual, iterations=tuple(log),
        dual_degenerate=bool(sol.degenerate))


def solve_copf_cost_adder(problem: CopfProblem,
                          solver: Optional[lp_mod.LpSolver] = None) -> DispatchResult:
    """Single LP solve of the carbon-price-adder dispatch."""
    require_valid(problem.network)
    if solver is None:
        solver = lp_mod.DEFAULT_SOLVER
    pieces = _build_lp(problem)
    sol = solver.solve(pieces[0], A_eq=pieces[1], b_eq=pieces[2],
                       A_ub=pieces[3], b_ub=pieces[4], bounds=pieces[5])
    return _assemble(problem, sol, pieces)


def flow_solution_from_dispatch(problem: CopfProblem,
                                result: DispatchResult) -> FlowSolution:
    """Lossless FlowSolution view of a dispatch, ready for carbon tracing."""
    load_mw, imports, _nw = _resolve_boundary(problem.network, problem.snapshot)
    return FlowSolution(
        line_flow=dict(result.line_flows),
        line_loss={l: 0.0 for l in result.line_flows},
        line_flow_received=dict(result.line_flows),
        gen_output=dict(result.setpoints),
        load_mw=load_mw,
        imports=imports,
    )


def _intensity_cut(problem: CopfProblem, bus: str, cap: float,
                   carbon: CarbonFlowSolution, pieces):
    """Linear row: carbon inflow at `bus` <= cap x power inflow, with upstream
    intensities and flow directions frozen at the current iterate."""
    net = problem.network
    (c, _a_eq, _b_eq, _a_ub, _b_ub, _bounds, gens, _phi_buses, gpos, ppos,
     _brow, _cap_rows, _emission_row, _cut_start) = pieces
    n_x = len(c)
    row = np.zeros(n_x)
    rhs = 0.0
    for g in gens:
        if g.bus == bus:
            row[gpos[g.id]] += g.gef - cap
    w = carbon.node_intensity
    for line in net.lines:
        f = carbon.flow.line_flow[line.id]
        if f > FLOW_EPS_MW and line.to_bus == bus:
            sgn, src = 1.0, line.from_bus
        elif f < -FLOW_EPS_MW and line.from_bus == bus:
            sgn, src = -1.0, line.to_bus
        elif abs(f) <= FLOW_EPS_MW and bus in (line.from_bus, line.to_bus):
            # Idle line: admit it as potential inflow so the relinearized
            # problem can recruit a cleaner neighbor instead of only
            # curtailing local units. Dirty neighbors stay excluded; the
            # next iterate re-freezes directions if the line wakes up.
            if line.to_bus == bus:
                sgn, src = 1.0, line.from_bus
            else:
                sgn, src = -1.0, line.to_bus
            if w[src] - cap >= 0.0:
                continue
        else:
            continue
        k = sgn / line.reactance  # oriented inflow magnitude in the phi vars
        coeff = w[src] - cap
        if line.from_bus in ppos:
            row[ppos[line.from_bus]] += coeff * k
        if line.to_bus in ppos:
            row[ppos[line.to_bus]] -= coeff * k
    if problem.snapshot.import_injections:
        for b, (mw, wi) in problem.snapshot.import_injections.items():
            if b == bus and mw > 0.0:
                rhs -= (wi - cap) * mw
    return row, rhs


def solve_copf_intensity_capped(problem: CopfProblem,
                                solver: Optional[lp_mod.LpSolver] = None,
                                max_iterations: int = 50,
                                tolerance: float = _CAP_TOL) -> DispatchResult:
    """Successive linearization of nodal intensity caps.

    Raises NotConverged (carrying the best iterate and the log) when the caps
    are still violated after `max_iterations` rounds; an LP made infeasible by
    the accumulated cuts raises Infeasible.
    """
    require_valid(problem.network)
    if solver is None:
        solver = lp_mod.DEFAULT_SOLVER
    caps = dict(problem.nodal_intensity_caps)
    for b, v in caps.items():
        if b not in problem.network.bus_index:
            raise UnknownId(f"intensity cap names unknown bus {b!r}")
        if v < 0.0:
            raise ValueError(f"intensity cap for bus {b!r} must be >= 0")
    if not caps:
        return solve_copf_cost_adder(problem, solver)

    cuts = []
    log = []
    best = None
    best_violation = np.inf
    for it in range(max_iterations):
        pieces = _build_lp(problem, extra_rows=cuts)
        try:
            sol = solver.solve(pieces[0], A_eq=pieces[1], b_eq=pieces[2],
                               A_ub=pieces[3], b_ub=pieces[4], bounds=pieces[5])
        except Infeasible as exc:
            raise Infeasible(
                f"intensity caps cut away every feasible dispatch "
                f"(iteration {it}): {exc}") from exc
        result = _assemble(problem, sol, pieces, log=log)
        carbon = solve_carbon_flow(problem.network,
                                   flow_solution_from_dispatch(problem, result),
                                   MixingRule.proportional_sharing())
        violated = {b: carbon.node_intensity[b] - cap
                    for b, cap in caps.items()
                    if carbon.node_intensity[b] > cap + tolerance}
        max_violation = max(violated.values(), default=0.0)
        log.append(IterationEntry(iteration=it, objective=result.objective,
                                  max_violation=float(max_violation),
                                  violated_buses=tuple(sorted(violated))))
        if not violated:
            return replace(result, iterations=tuple(log))
        if max_violation < best_violation:
            best_violation = max_violation
            best = replace(result, iterations=tuple(log))
        for b in sorted(violated):
            cuts.append(_intensity_cut(problem, b, caps[b], carbon, pieces))
    raise NotConverged(
        f"intensity caps still violated by {best_violation:.3e} after "
        f"{max_iterations} iterations", best=best, log=log)


def extract_prices(result: DispatchResult, problem: CopfProblem) -> NodalPrices:
    """Split nodal prices into the slack-bus energy component plus a
    PTDF-weighted congestion component.

    Exact for the base problem; emission-side constraints (total cap, intensity
    cuts) contribute dual terms outside this two-part split.
    """
    net = problem.network
    ptdf = compute_ptdf(net)
    energy = result.lmp[net.slack_bus]
    mu = np.array([result.congestion_duals.get(l, 0.0) for l in ptdf.line_ids])
    congestion = {}
    for b in net.bus_ids:
        col = ptdf.matrix[:, ptdf.bus_ids.index(b)]
        congestion[b] = float(-(mu @ col))
    return NodalPrices(lmp=dict(result.lmp), energy_component=float(energy),
                       congestion_component=congestion)
