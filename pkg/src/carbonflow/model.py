"""Grid data model: immutable network description plus structural validation.

All ids are strings and unique within their element type. Networks are frozen
dataclasses; anything stateful (dispatch, storage state, solutions) lives in
the solver modules, so a single Network can be shared freely across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Optional, Tuple

from .errors import InvalidNetwork


class StorageModel(enum.Enum):
    """Emission bookkeeping model attached to a storage unit."""

    WATER_TANK = "water_tank"
    LOAD_PLUS_CLEAN_GEN = "load_plus_clean_gen"


@dataclass(frozen=True)
class Bus:
    id: str
    name: str = ""
    area: str = ""


@dataclass(frozen=True)
class Line:
    """Transmission line. capacity_mw None means unbounded."""

    id: str
    from_bus: str
    to_bus: str
    reactance: float
    capacity_mw: Optional[float] = None
    loss_fraction: float = 0.0


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    gef: float  # generator emission factor, ton/MWh
    p_min: float = 0.0
    p_max: float = 0.0
    marginal_cost: float = 0.0
    fuel_label: str = ""


@dataclass(frozen=True)
class Load:
    """Consumer connected to a bus; demand_mw is the default when no
    time series supplies a per-timestep value."""

    id: str
    bus: str
    demand_mw: float = 0.0


@dataclass(frozen=True)
class StorageUnit:
    id: str
    bus: str
    energy_capacity_mwh: float
    power_limit_mw: float
    emission_model: StorageModel = StorageModel.WATER_TANK


@dataclass(frozen=True)
class Network:
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...] = ()
    generators: Tuple[Generator, ...] = ()
    loads: Tuple[Load, ...] = ()
    storage_units: Tuple[StorageUnit, ...] = ()
    slack_bus: str = ""
    base_mva: float = 100.0

    def __post_init__(self):
        # Accept lists at construction; store tuples.
        for name in ("buses", "lines", "generators", "loads", "storage_units"):
            value = getattr(self, name)
            if not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))

    @cached_property
    def bus_ids(self) -> Tuple[str, ...]:
        return tuple(sorted(b.id for b in self.buses))

    @cached_property
    def bus_index(self) -> Mapping[str, int]:
        return {b: i for i, b in enumerate(self.bus_ids)}

    @cached_property
    def buses_by_id(self) -> Mapping[str, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def lines_by_id(self) -> Mapping[str, Line]:
        return {l.id: l for l in self.lines}

    @cached_property
    def generators_by_id(self) -> Mapping[str, Generator]:
        return {g.id: g for g in self.generators}

    @cached_property
    def loads_by_id(self) -> Mapping[str, Load]:
        return {l.id: l for l in self.loads}

    @cached_property
    def storage_by_id(self) -> Mapping[str, StorageUnit]:
        return {s.id: s for s in self.storage_units}

    @cached_property
    def line_ids(self) -> Tuple[str, ...]:
        return tuple(sorted(l.id for l in self.lines))

    @cached_property
    def generator_ids(self) -> Tuple[str, ...]:
        return tuple(sorted(g.id for g in self.generators))

    def generators_at(self, bus: str) -> Tuple[Generator, ...]:
        return tuple(g for g in self.generators if g.bus == bus)

    def loads_at(self, bus: str) -> Tuple[Load, ...]:
        return tuple(l for l in self.loads if l.bus == bus)


@dataclass(frozen=True)
class Snapshot:
    """One timestep of boundary data for a network.

    load_mw maps load id -> MW demand; gen_mw (optional) maps generator id ->
    MW setpoint when the dispatch is externally given; import_injections maps
    bus id -> (MW, intensity ton/MWh). A negative import MW is a withdrawal
    (export) and its intensity entry is ignored.
    """

    load_mw: Mapping[str, float]
    gen_mw: Optional[Mapping[str, float]] = None
    import_injections: Optional[Mapping[str, Tuple[float, float]]] = None
    timestep_index: int = 0
    delta_t: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "load_mw", dict(self.load_mw))
        if self.gen_mw is not None:
            object.__setattr__(self, "gen_mw", dict(self.gen_mw))
        if self.import_injections is not None:
            cleaned = {b: (float(p), float(w)) for b, (p, w) in self.import_injections.items()}
            object.__setattr__(self, "import_injections", cleaned)


@dataclass(frozen=True)
class Violation:
    element_id: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> Tuple[str, ...]:
        return tuple(v.message for v in self.violations)


def _duplicates(ids):
    seen, dup = set(), []
    for i in ids:
        if i in seen:
            dup.append(i)
        seen.add(i)
    return dup


def validate_network(network: Network) -> ValidationReport:
    """Check every structural invariant; collect violations, never raise."""
    out = []

    def bad(element_id, message):
        out.append(Violation(element_id=element_id, message=message))

    bus_ids = {b.id for b in network.buses}
    if not network.buses:
        bad("", "network has no buses")
    for kind, coll in (("bus", network.buses), ("line", network.lines),
                       ("generator", network.generators), ("load", network.loads),
                       ("storage", network.storage_units)):
        for d in _duplicates([e.id for e in coll]):
            bad(d, f"duplicate {kind} id {d!r}")

    for line in network.lines:
        if line.from_bus not in bus_ids:
            bad(line.id, f"line {line.id!r} references unknown bus {line.from_bus!r}")
        if line.to_bus not in bus_ids:
            bad(line.id, f"line {line.id!r} references unknown bus {line.to_bus!r}")
        if line.from_bus == line.to_bus:
            bad(line.id, f"line {line.id!r} connects bus {line.from_bus!r} to itself")
        if not line.reactance > 0.0:
            bad(line.id, f"line {line.id!r} reactance must be > 0, got {line.reactance}")
        if line.capacity_mw is not None and line.capacity_mw < 0.0:
            bad(line.id, f"line {line.id!r} capacity must be >= 0 or unbounded")
        if not (0.0 <= line.loss_fraction < 1.0):
            bad(line.id, f"line {line.id!r} loss_fraction must lie in [0, 1)")

    for gen in network.generators:
        if gen.bus not in bus_ids:
            bad(gen.id, f"generator {gen.id!r} references unknown bus {gen.bus!r}")
        if gen.gef < 0.0:
            bad(gen.id, f"generator {gen.id!r} emission factor must be >= 0")
        if gen.p_min < 0.0:
            bad(gen.id, f"generator {gen.id!r} p_min must be >= 0")
        if gen.p_max < gen.p_min:
            bad(gen.id, f"generator {gen.id!r} p_max < p_min")

    for load in network.loads:
        if load.bus not in bus_ids:
            bad(load.id, f"load {load.id!r} references unknown bus {load.bus!r}")
        if load.demand_mw < 0.0:
            bad(load.id, f"load {load.id!r} default demand must be >= 0")

    for unit in network.storage_units:
        if unit.bus not in bus_ids:
            bad(unit.id, f"storage {unit.id!r} references unknown bus {unit.bus!r}")
        if not unit.energy_capacity_mwh > 0.0:
            bad(unit.id, f"storage {unit.id!r} energy capacity must be > 0")
        if not unit.power_limit_mw > 0.0:
            bad(unit.id, f"storage {unit.id!r} power limit must be > 0")

    if network.slack_bus not in bus_ids:
        bad(network.slack_bus, f"slack bus {network.slack_bus!r} is not a bus")
    if not network.base_mva > 0.0:
        bad("", f"base_mva must be > 0, got {network.base_mva}")

    # Connectivity over the undirected line graph.
    if network.buses and bus_ids:
        adj = {b: set() for b in bus_ids}
        for line in network.lines:
            if line.from_bus in bus_ids and line.to_bus in bus_ids:
                adj[line.from_bus].add(line.to_bus)
                adj[line.to_bus].add(line.from_bus)
        start = next(iter(sorted(bus_ids)))
        seen = {start}
        stack = [start]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        for isolated in sorted(bus_ids - seen):
            bad(isolated, f"bus {isolated!r} is disconnected from the slack component")

    return ValidationReport(violations=tuple(out))


def require_valid(network: Network) -> None:
    """Raise InvalidNetwork when validation reports any violation."""
    report = validate_network(network)
    if not report.ok:
        raise InvalidNetwork(report)


def with_generator_gef(network: Network, gen_id: str, gef: float) -> Network:
    """Copy of the network with one generator's emission factor replaced."""
    gens = tuple(replace(g, gef=gef) if g.id == gen_id else g for g in network.generators)
    return replace(network, generators=gens)
