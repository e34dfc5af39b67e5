"""Attributional accounting: average emission factors, per-entity attribution
and horizon aggregation.

Reports carry a method tag ("flow-based:<rule>", "area-average",
"consequential:avoided") and aggregation refuses to mix tags: attributional
totals and consequential deltas answer different questions, and netting one
against the other double-counts whatever the counterfactual already moved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple

from .dcflow import FlowSolution
from .errors import MixedMethods, ZeroGeneration
from .model import Network
from .tracing import CarbonFlowSolution

KIND_GENERATOR = "generator"
KIND_LOAD = "load"
KIND_GRID_OWNER = "grid-owner"
KIND_STORAGE = "storage"

METHOD_AREA_AVERAGE = "area-average"
METHOD_AVOIDED = "consequential:avoided"


@dataclass(frozen=True)
class EmissionRecord:
    entity_id: str
    kind: str
    scope: int
    energy_mwh: float
    emissions_ton: float


@dataclass(frozen=True)
class EmissionReport:
    records: Tuple[EmissionRecord, ...]
    method: str
    timesteps: Tuple[int, ...]

    def total(self, kind: Optional[str] = None, scope: Optional[int] = None) -> float:
        return sum(r.emissions_ton for r in self.records
                   if (kind is None or r.kind == kind)
                   and (scope is None or r.scope == scope))

    def by_entity(self) -> Mapping[Tuple[str, str, int], EmissionRecord]:
        out = {}
        for r in self.records:
            out[(r.entity_id, r.kind, r.scope)] = r
        return out

    def scope_balance_residual(self) -> float:
        """Scope-1 emissions minus everything attributed on the consumption
        side (loads, grid owner, storage net). Zero when carbon is conserved."""
        return self.total(scope=1) - self.total(scope=2)


def compute_aef(network: Network, gen_output: Mapping[str, float],
                imports: Optional[Mapping[str, Tuple[float, float]]] = None,
                area: Optional[str] = None,
                include_imports: bool = False) -> float:
    """Generation-weighted average emission factor (ton/MWh).

    `area` restricts to generators on buses tagged with that area;
    include_imports adds positive import injections as virtual generators
    (consumption-based accounting).
    """
    energy = 0.0
    carbon = 0.0
    for g in network.generators:
        if area is not None and network.buses_by_id[g.bus].area != area:
            continue
        out = gen_output.get(g.id, 0.0)
        if out <= 0.0:
            continue
        energy += out
        carbon += g.gef * out
    if include_imports and imports:
        for bus, (mw, w) in imports.items():
            if area is not None and network.buses_by_id[bus].area != area:
                continue
            if mw > 0.0:
                energy += mw
                carbon += w * mw
    if energy <= 0.0:
        where = f"area {area!r}" if area is not None else "network"
        raise ZeroGeneration(f"no generation in {where}; average factor undefined")
    return carbon / energy


def attribute_emissions(carbon: CarbonFlowSolution, delta_t: float = 1.0,
                        timestep: int = 0) -> EmissionReport:
    """Per-entity attribution of one traced timestep.

    Generators (and positive imports) are Scope 1; loads, exports, the grid
    owner (line losses) and storage activity are Scope 2. Storage records are
    signed: charging absorbs carbon (positive), discharging releases it back
    (negative), so horizon sums yield the net amount parked with the owner.
    """
    flow = carbon.flow
    records = []
    for gid in sorted(carbon.gen_emissions):
        records.append(EmissionRecord(
            entity_id=gid, kind=KIND_GENERATOR, scope=1,
            energy_mwh=max(flow.gen_output.get(gid, 0.0), 0.0) * delta_t,
            emissions_ton=carbon.gen_emissions[gid] * delta_t))
    for bus in sorted(carbon.import_emissions):
        mw, _w = flow.imports[bus]
        records.append(EmissionRecord(
            entity_id=f"import:{bus}", kind=KIND_GENERATOR, scope=1,
            energy_mwh=mw * delta_t,
            emissions_ton=carbon.import_emissions[bus] * delta_t))
    for lid in sorted(carbon.load_emissions):
        records.append(EmissionRecord(
            entity_id=lid, kind=KIND_LOAD, scope=2,
            energy_mwh=flow.load_mw.get(lid, 0.0) * delta_t,
            emissions_ton=carbon.load_emissions[lid] * delta_t))
    for bus in sorted(carbon.export_emissions):
        mw, _w = flow.imports[bus]
        records.append(EmissionRecord(
            entity_id=f"export:{bus}", kind=KIND_LOAD, scope=2,
            energy_mwh=-mw * delta_t,
            emissions_ton=carbon.export_emissions[bus] * delta_t))
    for s in flow.extra_sources:  # discharging: releases carbon to the grid
        records.append(EmissionRecord(
            entity_id=s.id, kind=KIND_STORAGE, scope=2,
            energy_mwh=-s.mw * delta_t,
            emissions_ton=-carbon.source_emissions[s.id] * delta_t))
    for xl in flow.extra_loads:  # charging: absorbs carbon from the grid
        records.append(EmissionRecord(
            entity_id=xl.id, kind=KIND_STORAGE, scope=2,
            energy_mwh=xl.mw * delta_t,
            emissions_ton=carbon.sink_emissions[xl.id] * delta_t))
    records.append(EmissionRecord(
        entity_id="grid", kind=KIND_GRID_OWNER, scope=2,
        energy_mwh=flow.total_loss() * delta_t,
        emissions_ton=carbon.total_loss_emissions() * delta_t))
    return EmissionReport(records=tuple(records), method=carbon.rule.method_tag,
                          timesteps=(timestep,))


def area_average_report(network: Network, flow: FlowSolution,
                        delta_t: float = 1.0, timestep: int = 0,
                        include_imports: bool = False) -> EmissionReport:
    """Pool-style attribution: every load pays its area's average factor.

    Network structure is ignored (that is the point of the comparison with the
    flow-based method); the grid owner picks up whatever the area factor times
    load does not cover, keeping Scope 1 and Scope 2 in balance per report.
    """
    areas = {network.buses_by_id[l.bus].area for l in network.loads}
    aef = {}
    for a in areas:
        aef[a] = compute_aef(network, flow.gen_output, imports=flow.imports,
                             area=a if a else None,
                             include_imports=include_imports)
    records = []
    scope1 = 0.0
    for g in sorted(network.generators, key=lambda g: g.id):
        out = max(flow.gen_output.get(g.id, 0.0), 0.0)
        records.append(EmissionRecord(g.id, KIND_GENERATOR, 1,
                                      out * delta_t, g.gef * out * delta_t))
        scope1 += g.gef * out * delta_t
    if include_imports:
        for bus in sorted(flow.imports):
            mw, w = flow.imports[bus]
            if mw > 0.0:
                records.append(EmissionRecord(f"import:{bus}", KIND_GENERATOR, 1,
                                              mw * delta_t, w * mw * delta_t))
                scope1 += w * mw * delta_t
    load_total = 0.0
    for l in sorted(network.loads, key=lambda l: l.id):
        demand = flow.load_mw.get(l.id, 0.0)
        a = network.buses_by_id[l.bus].area
        e = aef[a] * demand * delta_t
        records.append(EmissionRecord(l.id, KIND_LOAD, 2, demand * delta_t, e))
        load_total += e
    records.append(EmissionRecord("grid", KIND_GRID_OWNER, 2,
                                  flow.total_loss() * delta_t,
                                  scope1 - load_total))
    return EmissionReport(records=tuple(records), method=METHOD_AREA_AVERAGE,
                          timesteps=(timestep,))


def avoided_emissions_report(entity_id: str, delta_mwh: float, delta_tons: float,
                             timestep: int = 0) -> EmissionReport:
    """Consequential delta packaged as a report, tagged so aggregation with
    attributional reports refuses."""
    record = EmissionRecord(entity_id=entity_id, kind=KIND_LOAD, scope=2,
                            energy_mwh=delta_mwh, emissions_ton=delta_tons)
    return EmissionReport(records=(record,), method=METHOD_AVOIDED,
                          timesteps=(timestep,))


def aggregate_horizon(reports: Sequence[EmissionReport]) -> EmissionReport:
    """Entity-wise sums across disjoint timesteps of a single method."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    methods = {r.method for r in reports}
    if len(methods) > 1:
        raise MixedMethods(
            "refusing to aggregate reports with different accounting methods: "
            + ", ".join(sorted(methods)))
    seen = []
    for r in reports:
        for t in r.timesteps:
            if t in seen:
                raise ValueError(f"timestep {t} appears in more than one report")
            seen.append(t)
    sums = {}
    for r in reports:
        for rec in r.records:
            key = (rec.kind, rec.entity_id, rec.scope)
            if key in sums:
                prev = sums[key]
                sums[key] = EmissionRecord(rec.entity_id, rec.kind, rec.scope,
                                           prev.energy_mwh + rec.energy_mwh,
                                           prev.emissions_ton + rec.emissions_ton)
            else:
                sums[key] = rec
    records = tuple(sums[k] for k in sorted(sums))
    return EmissionReport(records=records, method=reports[0].method,
                          timesteps=tuple(sorted(seen)))
