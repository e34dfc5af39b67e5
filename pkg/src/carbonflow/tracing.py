"""Carbon flow tracing over realized DC power flows.

Virtual carbon rides the physical flows: each bus mixes the carbon arriving on
inflowing lines with local generation (plus imports and storage discharge,
which act as generators) and every MW leaving the bus carries the same nodal
intensity. Receiving-end powers weight the mix, so line losses drop their
carbon on the wire (attributed later to the grid owner) and conservation holds
at every node: carbon can be traced and attributed but never created or
destroyed.

Two mixing rules ship. Proportional sharing solves the standard linear system
in the nodal intensities. Contract priority carves bilateral deliveries out of
the pool first: the contracted MW is routed from source bus to sink bus along
realized flow directions at the source's own intensity (lossless), and the
remainder mixes proportionally with the contracted amounts removed from the
source's output and the sink's demand. Losses stay with the residual mix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from networkx.algorithms.flow import shortest_augmenting_path
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dcflow import FlowSolution, oriented_edges
from .errors import InfeasibleContract, SingularSystem, UnknownId
from .model import Network

PROPORTIONAL_SHARING = "proportional-sharing"
CONTRACT_PRIORITY = "contract-priority"

#: Slack applied when comparing contracted MW against outputs/demands/flows.
_CONTRACT_TOL = 1e-9


@dataclass(frozen=True)
class Contract:
    """Bilateral delivery: `mw` of `source_id`'s output reserved for `load_id`."""

    load_id: str
    source_id: str
    mw: float


@dataclass(frozen=True)
class MixingRule:
    kind: str = PROPORTIONAL_SHARING
    contracts: Tuple[Contract, ...] = ()

    @staticmethod
    def proportional_sharing() -> "MixingRule":
        return MixingRule(kind=PROPORTIONAL_SHARING)

    @staticmethod
    def contract_priority(contracts: Sequence[Contract]) -> "MixingRule":
        return MixingRule(kind=CONTRACT_PRIORITY, contracts=tuple(contracts))

    @property
    def method_tag(self) -> str:
        return f"flow-based:{self.kind}"


@dataclass(frozen=True)
class DeliverabilityVerdict:
    deliverable: bool
    requested_mw: float
    max_deliverable_mw: float
    bottleneck_lines: Tuple[str, ...] = ()


@dataclass(frozen=True)
class CarbonFlowSolution:
    """Nodal/branch intensities and every traced carbon quantity (ton/h).

    Branch carbon values are magnitudes along the realized flow direction;
    lines carrying exactly zero power hold zeros throughout.
    """

    node_intensity: Mapping[str, float]
    branch_intensity: Mapping[str, float]
    branch_carbon_sent: Mapping[str, float]
    branch_carbon_received: Mapping[str, float]
    branch_carbon_loss: Mapping[str, float]
    gen_emissions: Mapping[str, float]
    load_emissions: Mapping[str, float]
    import_emissions: Mapping[str, float]
    export_emissions: Mapping[str, float]
    source_emissions: Mapping[str, float]
    sink_emissions: Mapping[str, float]
    zero_throughflow: Tuple[str, ...]
    rule: MixingRule
    flow: FlowSolution

    def total_generation_emissions(self) -> float:
        return (sum(self.gen_emissions.values()) + sum(self.import_emissions.values())
                + sum(self.source_emissions.values()))

    def total_consumption_emissions(self) -> float:
        return (sum(self.load_emissions.values()) + sum(self.export_emissions.values())
                + sum(self.sink_emissions.values()))

    def total_loss_emissions(self) -> float:
        return sum(self.branch_carbon_loss.values())


def _bus_sources(network: Network, flow: FlowSolution):
    """Per-bus generation-side terms: (MW, ton/h) plus per-entity breakdowns."""
    src_mw = {b: 0.0 for b in network.bus_ids}
    src_carbon = {b: 0.0 for b in network.bus_ids}
    gen_mw = {}
    for g in sorted(network.generators, key=lambda g: g.id):
        out = flow.gen_output.get(g.id, 0.0)
        if out < -1e-9:
            raise ValueError(
                f"generator {g.id!r} has negative output {out:.6g} MW; "
                "carbon tracing needs nonnegative source terms")
        out = max(out, 0.0)
        gen_mw[g.id] = out
        src_mw[g.bus] += out
        src_carbon[g.bus] += g.gef * out
    import_mw = {}
    for bus in sorted(flow.imports):
        mw, w = flow.imports[bus]
        if mw > 0.0:
            import_mw[bus] = (mw, w)
            src_mw[bus] += mw
            src_carbon[bus] += w * mw
    for s in flow.extra_sources:
        if s.mw < -1e-9:
            raise ValueError(f"auxiliary source {s.id!r} has negative MW")
        src_mw[s.bus] += max(s.mw, 0.0)
        src_carbon[s.bus] += s.intensity * max(s.mw, 0.0)
    return src_mw, src_carbon, gen_mw, import_mw


def _solve_mixing_system(network: Network, edges, src_mw, src_carbon):
    """Nodal intensities from receiving-end-weighted proportional sharing.

    edges: (line_id, src_bus, dst_bus, received_mw). Returns (intensity map,
    zero-throughflow bus tuple).
    """
    bus_ids = network.bus_ids
    idx = network.bus_index
    n = len(bus_ids)
    inflow = np.zeros(n)
    for b in bus_ids:
        inflow[idx[b]] += src_mw[b]
    for _lid, _s, d, recv in edges:
        inflow[idx[d]] += recv

    # Every energized bus must trace back to a source, else the mixing system
    # is singular (a sourceless circulation cannot be assigned an intensity).
    reached = {b for b in bus_ids if src_mw[b] > 0.0}
    frontier = list(reached)
    adj = {}
    for _lid, s, d, recv in edges:
        if recv > 0.0:
            adj.setdefault(s, set()).add(d)
    while frontier:
        nxt = []
        for b in frontier:
            for d in adj.get(b, ()):
                if d not in reached:
                    reached.add(d)
                    nxt.append(d)
        frontier = nxt
    orphaned = sorted(b for b in bus_ids if inflow[idx[b]] > 0.0 and b not in reached)
    if orphaned:
        raise SingularSystem(
            "no generation reaches energized node(s): " + ", ".join(orphaned))

    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    zero_buses = []
    for b in bus_ids:
        i = idx[b]
        if inflow[i] == 0.0:
            zero_buses.append(b)
            rows.append(i); cols.append(i); vals.append(1.0)
            rhs[i] = 0.0
        else:
            rows.append(i); cols.append(i); vals.append(inflow[i])
            rhs[i] = src_carbon[b]
    for _lid, s, d, recv in edges:
        i, j = idx[d], idx[s]
        if inflow[i] == 0.0 or recv == 0.0:
            continue
        rows.append(i); cols.append(j); vals.append(-recv)
    mat = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    try:
        w = spla.spsolve(mat, rhs)
    except RuntimeError as exc:
        raise SingularSystem(f"mixing system is singular: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise SingularSystem("mixing system produced non-finite intensities")
    w = np.where(np.abs(w) < 1e-15, 0.0, w)
    w = np.maximum(w, 0.0)
    return {b: float(w[idx[b]]) for b in bus_ids}, tuple(zero_buses)


def _flow_graph(network: Network, flow: FlowSolution):
    """Directed graph of realized flows, capacitated by received MW.

    Parallel lines between the same bus pair merge into one edge; the line ids
    are kept on the edge for bottleneck reporting and per-line splitting.
    """
    g = nx.DiGraph()
    g.add_nodes_from(network.bus_ids)
    for line, s, d, _sent, recv, _loss in oriented_edges(network, flow):
        if recv <= 0.0:
            continue
        if g.has_edge(s, d):
            g[s][d]["capacity"] += recv
            g[s][d]["lines"].append(line.id)
        else:
            g.add_edge(s, d, capacity=recv, lines=[line.id])
    return g


def check_deliverability(network: Network, flow: FlowSolution,
                         contract: Contract) -> DeliverabilityVerdict:
    """Can the contracted MW ride the realized flows from source to sink?

    Max-flow over the realized flow directions, each edge capacitated by the
    delivered (receiving-end) MW. A contract between co-located source and
    sink is trivially deliverable.
    """
    src_bus, dst_bus = _contract_endpoints(network, contract)
    mw = float(contract.mw)
    if mw < 0.0:
        raise InfeasibleContract(f"contract for {contract.load_id!r} has negative MW")
    if src_bus == dst_bus:
        return DeliverabilityVerdict(True, mw, mw)
    graph = _flow_graph(network, flow)
    # The default preflow-push can die on float capacities; SAP is robust.
    value, _ = nx.maximum_flow(graph, src_bus, dst_bus,
                               flow_func=shortest_augmenting_path)
    if value >= mw - _CONTRACT_TOL:
        return DeliverabilityVerdict(True, mw, float(value))
    cut_value, (side_s, _side_t) = nx.minimum_cut(
        graph, src_bus, dst_bus, flow_func=shortest_augmenting_path)
    bottleneck = []
    for s, d, data in graph.edges(data=True):
        if s in side_s and d not in side_s:
            bottleneck.extend(data["lines"])
    return DeliverabilityVerdict(False, mw, float(cut_value), tuple(sorted(bottleneck)))


def _contract_endpoints(network: Network, contract: Contract):
    gen = network.generators_by_id.get(contract.source_id)
    if gen is None:
        raise UnknownId(f"contract names unknown source generator {contract.source_id!r}")
    load = network.loads_by_id.get(contract.load_id)
    if load is None:
        raise UnknownId(f"contract names unknown load {contract.load_id!r}")
    return gen.bus, load.bus


def _route_contracts(network, flow, contracts, gen_mw, load_mw):
    """Sequentially route each contract; returns per-line contract power and
    carbon, per-generator carved MW and per-load carved (MW, carbon)."""
    graph = _flow_graph(network, flow)
    line_power = {l.id: 0.0 for l in network.lines}
    line_carbon = {l.id: 0.0 for l in network.lines}
    carved_gen = {}
    carved_load_mw = {}
    carved_load_carbon = {}
    for k, contract in enumerate(contracts):
        mw = float(contract.mw)
        if mw < 0.0:
            raise InfeasibleContract(
                f"contract {k} ({contract.load_id!r}<-{contract.source_id!r}) has negative MW")
        if mw == 0.0:
            continue
        src_bus, dst_bus = _contract_endpoints(network, contract)
        gen = network.generators_by_id[contract.source_id]
        out = gen_mw.get(contract.source_id, 0.0)
        carved = carved_gen.get(contract.source_id, 0.0)
        if carved + mw > out + _CONTRACT_TOL:
            raise InfeasibleContract(
                f"contracts on source {contract.source_id!r} total "
                f"{carved + mw:.6g} MW against output {out:.6g} MW")
        demand = load_mw.get(contract.load_id, 0.0)
        taken = carved_load_mw.get(contract.load_id, 0.0)
        if taken + mw > demand + _CONTRACT_TOL:
            raise InfeasibleContract(
                f"contracts for load {contract.load_id!r} total "
                f"{taken + mw:.6g} MW against demand {demand:.6g} MW")

        if src_bus != dst_bus:
            super_src = ("__contract_source__", k)
            graph.add_edge(super_src, src_bus, capacity=mw, lines=[])
            value, flow_dict = nx.maximum_flow(
                graph, super_src, dst_bus, flow_func=shortest_augmenting_path)
            if value < mw - _CONTRACT_TOL:
                # Bottleneck on the residual graph (earlier contracts deducted).
                graph.remove_node(super_src)
                _cut, (side_s, _side_t) = nx.minimum_cut(
                    graph, src_bus, dst_bus, flow_func=shortest_augmenting_path)
                bottleneck = sorted(
                    lid for s, d, data in graph.edges(data=True)
                    if s in side_s and d not in side_s for lid in data["lines"])
                raise InfeasibleContract(
                    f"contract {contract.load_id!r}<-{contract.source_id!r} for "
                    f"{mw:.6g} MW exceeds deliverable {value:.6g} MW; bottleneck: "
                    + (", ".join(bottleneck) or "no path"))
            graph.remove_node(super_src)
            for s, targets in flow_dict.items():
                if s == super_src:
                    continue
                for d, used in targets.items():
                    if used <= 0.0 or d == super_src:
                        continue
                    edge = graph[s][d]
                    edge["capacity"] -= used
                    # Split across parallel lines in proportion to delivered MW.
                    total_recv = sum(
                        abs(flow.line_flow_received[lid]) for lid in edge["lines"])
                    for lid in edge["lines"]:
                        share = abs(flow.line_flow_received[lid]) / total_recv
                        line_power[lid] += used * share
                        line_carbon[lid] += used * share * gen.gef

        carved_gen[contract.source_id] = carved + mw
        carved_load_mw[contract.load_id] = taken + mw
        carved_load_carbon[contract.load_id] = (
            carved_load_carbon.get(contract.load_id, 0.0) + mw * gen.gef)
    return line_power, line_carbon, carved_gen, carved_load_mw, carved_load_carbon


def solve_carbon_flow(network: Network, flow: FlowSolution,
                      rule: Optional[MixingRule] = None) -> CarbonFlowSolution:
    """Trace carbon across a consistent flow solution under the mixing rule."""
    if rule is None:
        rule = MixingRule.proportional_sharing()
    src_mw, src_carbon, gen_mw, import_mw = _bus_sources(network, flow)
    edges = [(line.id, s, d, recv)
             for line, s, d, _sent, recv, _loss in oriented_edges(network, flow)]

    if rule.kind == CONTRACT_PRIORITY:
        (c_power, c_carbon, carved_gen,
         carved_load_mw, carved_load_carbon) = _route_contracts(
            network, flow, rule.contracts, gen_mw, flow.load_mw)
        res_src_mw = dict(src_mw)
        res_src_carbon = dict(src_carbon)
        for gid, carved in carved_gen.items():
            g = network.generators_by_id[gid]
            res_src_mw[g.bus] -= carved
            res_src_carbon[g.bus] -= carved * g.gef
        res_edges = [(lid, s, d, max(recv - c_power[lid], 0.0))
                     for lid, s, d, recv in edges]
        w_res, _zeros = _solve_mixing_system(network, res_edges, res_src_mw, res_src_carbon)
    elif rule.kind == PROPORTIONAL_SHARING:
        c_power = {l.id: 0.0 for l in network.lines}
        c_carbon = {l.id: 0.0 for l in network.lines}
        carved_load_mw, carved_load_carbon = {}, {}
        w_res, _zeros = _solve_mixing_system(network, edges, src_mw, src_carbon)
    else:
        raise ValueError(f"unknown mixing rule kind {rule.kind!r}")

    branch_w = {l.id: 0.0 for l in network.lines}
    e_sent = {l.id: 0.0 for l in network.lines}
    e_recv = {l.id: 0.0 for l in network.lines}
    e_loss = {l.id: 0.0 for l in network.lines}
    carbon_in = {b: src_carbon[b] for b in network.bus_ids}
    power_in = {b: src_mw[b] for b in network.bus_ids}
    for line, s, d, sent, recv, loss in oriented_edges(network, flow):
        lid = line.id
        res_sent = max(sent - c_power[lid], 0.0)
        res_recv = max(recv - c_power[lid], 0.0)
        e_sent[lid] = w_res[s] * res_sent + c_carbon[lid]
        e_recv[lid] = w_res[s] * res_recv + c_carbon[lid]
        e_loss[lid] = w_res[s] * loss
        branch_w[lid] = e_sent[lid] / sent if sent > 0.0 else 0.0
        carbon_in[d] += e_recv[lid]
        power_in[d] += recv

    node_w = {}
    zero_buses = []
    for b in network.bus_ids:
        if power_in[b] == 0.0:
            node_w[b] = 0.0
            zero_buses.append(b)
        else:
            node_w[b] = max(carbon_in[b] / power_in[b], 0.0)

    gen_e = {g.id: g.gef * gen_mw[g.id] for g in network.generators}
    import_e = {bus: w * mw for bus, (mw, w) in import_mw.items()}
    export_e = {}
    for bus in sorted(flow.imports):
        mw, _w = flow.imports[bus]
        if mw < 0.0:
            export_e[bus] = w_res[bus] * (-mw)
    load_e = {}
    for load in network.loads:
        demand = flow.load_mw.get(load.id, 0.0)
        carved = carved_load_mw.get(load.id, 0.0)
        load_e[load.id] = (w_res[load.bus] * max(demand - carved, 0.0)
                           + carved_load_carbon.get(load.id, 0.0))
    source_e = {s.id: s.intensity * max(s.mw, 0.0) for s in flow.extra_sources}
    sink_e = {xl.id: w_res[xl.bus] * xl.mw for xl in flow.extra_loads}

    return CarbonFlowSolution(
        node_intensity=node_w,
        branch_intensity=branch_w,
        branch_carbon_sent=e_sent,
        branch_carbon_received=e_recv,
        branch_carbon_loss=e_loss,
        gen_emissions=gen_e,
        load_emissions=load_e,
        import_emissions=import_e,
        export_emissions=export_e,
        source_emissions=source_e,
        sink_emissions=sink_e,
        zero_throughflow=tuple(zero_buses),
        rule=rule,
        flow=flow,
    )


def solve_carbon_flow_acyclic(network: Network, flow: FlowSolution) -> Mapping[str, float]:
    """Forward-substitution intensities for acyclic flow patterns.

    Independent of the linear-system path: buses are processed in topological
    order of the realized flow directions, each intensity computed directly
    from upstream values. Raises ValueError when the flow digraph has a cycle.
    Used as a cross-check oracle; proportional sharing only.
    """
    src_mw, src_carbon, _gen_mw, _import_mw = _bus_sources(network, flow)
    edges = [(line.id, s, d, recv)
             for line, s, d, _sent, recv, _loss in oriented_edges(network, flow)]
    graph = nx.DiGraph()
    graph.add_nodes_from(network.bus_ids)
    for _lid, s, d, recv in edges:
        if recv > 0.0:
            graph.add_edge(s, d)
    try:
        order = list(nx.topological_sort(graph))
    except nx.NetworkXUnfeasible as exc:
        raise ValueError("flow digraph has a cycle; no topological order") from exc
    inbound = {}
    for lid, s, d, recv in edges:
        inbound.setdefault(d, []).append((s, recv))
    w = {}
    for b in order:
        power = src_mw[b] + sum(recv for _s, recv in inbound.get(b, ()))
        if power == 0.0:
            w[b] = 0.0
            continue
        carbon = src_carbon[b] + sum(w[s] * recv for s, recv in inbound.get(b, ()))
        w[b] = carbon / power
    return w
