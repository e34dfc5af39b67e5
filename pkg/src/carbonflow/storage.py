"""Storage emission state models and horizon simulation.

Two bookkeeping models for the same physics. The water-tank model carries a
carbon state alongside the energy state: charging pours the bus intensity in,
discharging drains at the tank's own blended intensity, so the stored carbon
empties exactly when the energy does. The load-plus-clean-generator model
keeps no carbon state: charging is an ordinary load whose emissions stick to
the storage owner, discharging re-enters the grid carbon-free.

Sign convention: positive schedule MW charges, negative discharges. Charging
and discharging are exclusive by construction (one signed number per step).
Round-trip efficiency is 1.0 (lossless); no efficiency extension is wired in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple

from . import lp as lp_mod
from .accounting import EmissionReport, aggregate_horizon, attribute_emissions
from .consequential import dispatch_network_constrained
from .dcflow import ExtraLoad, ExtraSource, FlowSolution, apply_losses, solve_dc_power_flow
from .errors import (CapacityViolated, InfeasibleSchedule, PowerLimitViolated,
                     UnknownId)
from .model import Network, Snapshot, StorageModel, StorageUnit, require_valid
from .tracing import CarbonFlowSolution, MixingRule, solve_carbon_flow

_TOL = 1e-9


@dataclass(frozen=True)
class StorageState:
    energy_mwh: float = 0.0
    carbon_ton: float = 0.0

    @property
    def intensity(self) -> float:
        """Blended intensity of the stored energy; zero when empty."""
        return self.carbon_ton / self.energy_mwh if self.energy_mwh > 0.0 else 0.0


def _check_power(unit: StorageUnit, power_mw: float) -> None:
    if abs(power_mw) > unit.power_limit_mw + _TOL:
        raise PowerLimitViolated(
            f"storage {unit.id!r}: |{power_mw:.6g}| MW exceeds limit "
            f"{unit.power_limit_mw:.6g} MW")


def _check_energy(unit: StorageUnit, energy: float) -> float:
    if energy < -_TOL or energy > unit.energy_capacity_mwh + _TOL:
        raise CapacityViolated(
            f"storage {unit.id!r}: energy {energy:.6g} MWh outside "
            f"[0, {unit.energy_capacity_mwh:.6g}]")
    return min(max(energy, 0.0), unit.energy_capacity_mwh)


def step_water_tank(unit: StorageUnit, state: StorageState, power_mw: float,
                    node_intensity: float, delta_t: float) -> StorageState:
    """One timestep of the carbon-stateful model."""
    _check_power(unit, power_mw)
    if power_mw == 0.0:
        return state
    if power_mw > 0.0:
        energy = _check_energy(unit, state.energy_mwh + delta_t * power_mw)
        carbon = state.carbon_ton + delta_t * node_intensity * power_mw
        return StorageState(energy_mwh=energy, carbon_ton=carbon)
    energy = _check_energy(unit, state.energy_mwh + delta_t * power_mw)
    # Draining at the blended intensity keeps carbon proportional to energy,
    # so an emptied tank holds exactly zero carbon.
    return StorageState(energy_mwh=energy, carbon_ton=state.intensity * energy)


def step_clean_gen_model(unit: StorageUnit, state: StorageState, power_mw: float,
                         node_intensity: float,
                         delta_t: float) -> Tuple[StorageState, float]:
    """One timestep of the stateless model.

    Returns (new state, tons attributed to the owner this step); the state's
    carbon_ton stays zero because discharge re-enters the grid carbon-free.
    """
    _check_power(unit, power_mw)
    if power_mw == 0.0:
        return state, 0.0
    energy = _check_energy(unit, state.energy_mwh + delta_t * power_mw)
    attributed = delta_t * node_intensity * power_mw if power_mw > 0.0 else 0.0
    return StorageState(energy_mwh=energy, carbon_ton=0.0), attributed


def discharge_intensity(unit: StorageUnit, state: StorageState,
                        model: Optional[StorageModel] = None) -> float:
    """Intensity carried by discharged power under the unit's model."""
    model = model or unit.emission_model
    if model is StorageModel.WATER_TANK:
        return state.intensity
    return 0.0


@dataclass(frozen=True)
class HorizonResult:
    reports: Tuple[EmissionReport, ...]
    aggregate: EmissionReport
    states: Mapping[str, Tuple[StorageState, ...]]  # per unit, length T+1
    flows: Tuple[FlowSolution, ...]
    carbon: Tuple[CarbonFlowSolution, ...]


def _merge_storage_into_imports(snapshot: Snapshot, powers, units) -> Snapshot:
    """Storage folded into import entries so the dispatch LP sees net demand."""
    imports = dict(snapshot.import_injections or {})
    for unit_id, p in powers.items():
        if p == 0.0:
            continue
        bus = units[unit_id].bus
        mw, w = imports.get(bus, (0.0, 0.0))
        new_mw = mw - p  # charging withdraws, discharging injects
        new_w = (w * mw / new_mw) if new_mw > 0.0 and mw > 0.0 else 0.0
        imports[bus] = (new_mw, new_w)
    return Snapshot(load_mw=snapshot.load_mw, gen_mw=None,
                    import_injections=imports,
                    timestep_index=snapshot.timestep_index,
                    delta_t=snapshot.delta_t)


def simulate_horizon(network: Network, snapshots: Sequence[Snapshot],
                     schedule: Mapping[str, Sequence[float]],
                     rule: Optional[MixingRule] = None,
                     model_override: Optional[StorageModel] = None,
                     initial_states: Optional[Mapping[str, StorageState]] = None,
                     solver: Optional[lp_mod.LpSolver] = None) -> HorizonResult:
    """Run flows, tracing and attribution across a horizon with storage.

    Snapshots with gen_mw use the given dispatch; others are re-dispatched at
    least cost with the scheduled storage folded into net demand. Storage
    state updates per the unit's emission model (or model_override for all).
    """
    require_valid(network)
    snapshots = list(snapshots)
    for unit_id in schedule:
        if unit_id not in network.storage_by_id:
            raise UnknownId(f"schedule names unknown storage unit {unit_id!r}")
        if len(schedule[unit_id]) < len(snapshots):
            raise InfeasibleSchedule(
                f"schedule for {unit_id!r} covers {len(schedule[unit_id])} of "
                f"{len(snapshots)} timesteps")
    units = network.storage_by_id
    states = {}
    for u in network.storage_units:
        given = (initial_states or {}).get(u.id)
        states[u.id] = [given if given is not None else StorageState()]

    indices = [s.timestep_index for s in snapshots]
    if len(set(indices)) != len(indices):
        indices = list(range(len(snapshots)))

    reports, flows, carbons = [], [], []
    for t, snap in enumerate(snapshots):
        powers = {uid: float(schedule.get(uid, ())[t]) if uid in schedule else 0.0
                  for uid in units}
        extra_sources, extra_loads = [], []
        for uid in sorted(units):
            p = powers[uid]
            unit = units[uid]
            state = states[uid][-1]
            try:
                _check_power(unit, p)
                _check_energy(unit, state.energy_mwh + snap.delta_t * p)
            except (PowerLimitViolated, CapacityViolated) as exc:
                raise InfeasibleSchedule(
                    f"timestep {indices[t]}: {exc}") from exc
            model = model_override or unit.emission_model
            if p > 0.0:
                extra_loads.append(ExtraLoad(id=uid, bus=unit.bus, mw=p))
            elif p < 0.0:
                extra_sources.append(ExtraSource(
                    id=uid, bus=unit.bus, mw=-p,
                    intensity=discharge_intensity(unit, state, model)))

        if snap.gen_mw is None:
            dispatched = dispatch_network_constrained(
                network, _merge_storage_into_imports(snap, powers, units), solver)
            snap_t = Snapshot(load_mw=snap.load_mw, gen_mw=dispatched.setpoints,
                              import_injections=snap.import_injections,
                              timestep_index=snap.timestep_index,
                              delta_t=snap.delta_t)
        else:
            snap_t = snap
        flow = solve_dc_power_flow(network, snap_t,
                                   extra_sources=extra_sources,
                                   extra_loads=extra_loads)
        flow = apply_losses(network, flow)
        carbon = solve_carbon_flow(network, flow, rule)
        reports.append(attribute_emissions(carbon, snap.delta_t,
                                           timestep=indices[t]))
        flows.append(flow)
        carbons.append(carbon)

        for uid in sorted(units):
            unit = units[uid]
            p = powers[uid]
            state = states[uid][-1]
            w_bus = carbon.node_intensity[unit.bus]
            model = model_override or unit.emission_model
            if model is StorageModel.WATER_TANK:
                states[uid].append(step_water_tank(unit, state, p, w_bus, snap.delta_t))
            else:
                new_state, _attr = step_clean_gen_model(unit, state, p, w_bus,
                                                        snap.delta_t)
                states[uid].append(new_state)

    aggregate = aggregate_horizon(reports) if reports else EmissionReport(
        records=(), method=MixingRule.proportional_sharing().method_tag, timesteps=())
    return HorizonResult(
        reports=tuple(reports), aggregate=aggregate,
        states={uid: tuple(v) for uid, v in states.items()},
        flows=tuple(flows), carbon=tuple(carbons))
