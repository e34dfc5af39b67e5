"""Shared builders: seeded random connected networks and solved instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pytest

from carbonflow.dcflow import (ExtraLoad, ExtraSource, FlowSolution,
                               apply_losses, solve_dc_power_flow)
from carbonflow.model import (Bus, Generator, Line, Load, Network, Snapshot,
                              StorageUnit)
from carbonflow.tracing import Contract, check_deliverability


def random_network(rng: np.random.Generator, n_min: int = 3, n_max: int = 20,
                   losses: bool = True, tree_only: bool = False) -> Network:
    """Connected network: random spanning tree plus optional extra edges."""
    n = int(rng.integers(n_min, n_max + 1))
    bus_ids = [f"n{i:02d}" for i in range(n)]
    buses = tuple(Bus(id=b, area="east" if i % 2 else "west")
                  for i, b in enumerate(bus_ids))
    order = rng.permutation(n)
    lines = []

    def add_line(i, j):
        frac = float(rng.uniform(0.01, 0.2)) if losses and rng.random() < 0.4 else 0.0
        lines.append(Line(id=f"e{len(lines):02d}", from_bus=bus_ids[i],
                          to_bus=bus_ids[j],
                          reactance=float(rng.uniform(0.05, 0.5)),
                          loss_fraction=frac))

    for k in range(1, n):
        add_line(int(order[k]), int(order[int(rng.integers(0, k))]))
    if not tree_only:
        for _ in range(int(rng.integers(0, n))):
            i, j = int(rng.integers(0, n)), int(rng.integers(0, n))
            if i != j:
                add_line(i, j)

    n_gen = int(rng.integers(1, 4))
    gen_buses = [bus_ids[int(rng.integers(0, n))] for _ in range(n_gen)]
    slack = gen_buses[0]
    gens = tuple(Generator(id=f"g{k}", bus=gen_buses[k],
                           gef=float(rng.uniform(0.0, 1.2)),
                           p_max=1e4,
                           marginal_cost=float(rng.uniform(1.0, 50.0)))
                 for k in range(n_gen))
    n_load = int(rng.integers(1, n + 1))
    loads = tuple(Load(id=f"d{k}", bus=bus_ids[int(rng.integers(0, n))],
                       demand_mw=float(rng.uniform(5.0, 100.0)))
                  for k in range(n_load))
    return Network(buses=buses, lines=tuple(lines), generators=gens,
                   loads=loads, slack_bus=slack)


def random_operating_point(rng: np.random.Generator, network: Network,
                           with_imports: bool = False,
                           with_storage: bool = False):
    """Setpoints, imports and storage exchanges that keep the slack unit
    (g0, which absorbs the residual) at nonnegative output."""
    total_load = sum(l.demand_mw for l in network.loads)
    budget = float(rng.uniform(0.2, 0.85)) * total_load
    non_slack = [g.id for g in network.generators if g.id != "g0"]
    sources = []  # (kind, key) sharing the budget
    sources.extend(("gen", g) for g in non_slack)
    imports = {}
    if with_imports and rng.random() < 0.7:
        for _ in range(int(rng.integers(1, 3))):
            bus = network.bus_ids[int(rng.integers(0, len(network.bus_ids)))]
            imports.setdefault(bus, float(rng.uniform(0.0, 1.2)))
            sources.append(("import", bus))
    extra_sources = []
    extra_loads = []
    if with_storage and rng.random() < 0.8:
        for k in range(int(rng.integers(1, 3))):
            bus = network.bus_ids[int(rng.integers(0, len(network.bus_ids)))]
            if rng.random() < 0.5:
                sources.append(("discharge", (k, bus)))
            else:
                extra_loads.append(ExtraLoad(id=f"x{k}", bus=bus,
                                             mw=float(rng.uniform(1.0, 10.0))))
    shares = rng.dirichlet(np.ones(len(sources))) * budget if sources else []
    gen_mw = {g.id: 0.0 for g in network.generators}
    import_injections = {}
    for (kind, key), mw in zip(sources, shares):
        mw = float(mw)
        if kind == "gen":
            gen_mw[key] = mw
        elif kind == "import":
            import_injections[key] = (mw, imports[key])
        else:
            k, bus = key
            extra_sources.append(ExtraSource(id=f"s{k}", bus=bus, mw=mw,
                                             intensity=float(rng.uniform(0.0, 1.2))))
    snap = Snapshot(load_mw={l.id: l.demand_mw for l in network.loads},
                    gen_mw=gen_mw,
                    import_injections=import_injections or None)
    return snap, tuple(extra_sources), tuple(extra_loads)


@dataclass
class SolvedInstance:
    network: Network
    snapshot: Snapshot
    flow: FlowSolution
    extra_sources: Tuple[ExtraSource, ...]
    extra_loads: Tuple[ExtraLoad, ...]


def solved_instance(seed: int, with_imports: bool = False,
                    with_storage: bool = False, losses: bool = True,
                    n_max: int = 20, tree_only: bool = False) -> SolvedInstance:
    rng = np.random.default_rng(seed)
    network = random_network(rng, losses=losses, n_max=n_max, tree_only=tree_only)
    snap, srcs, sinks = random_operating_point(
        rng, network, with_imports=with_imports, with_storage=with_storage)
    lossless = solve_dc_power_flow(network, snap, extra_sources=srcs,
                                   extra_loads=sinks)
    flow = apply_losses(network, lossless)
    return SolvedInstance(network, snap, flow, srcs, sinks)


def pick_contract(rng: np.random.Generator, inst: SolvedInstance) -> Optional[Contract]:
    """A deliverable (load <- generator) contract from realized quantities."""
    candidates = [(l, g) for l in inst.network.loads
                  for g in inst.network.generators
                  if inst.flow.gen_output.get(g.id, 0.0) > 1.0 and l.demand_mw > 1.0]
    if not candidates:
        return None
    load, gen = candidates[int(rng.integers(0, len(candidates)))]
    probe = check_deliverability(inst.network, inst.flow,
                                 Contract(load.id, gen.id, 1e9))
    cap = min(load.demand_mw, inst.flow.gen_output[gen.id],
              probe.max_deliverable_mw)
    mw = float(rng.uniform(0.3, 0.9)) * cap
    if mw < 0.5:
        return None
    return Contract(load_id=load.id, source_id=gen.id, mw=mw)


def source_intensity_range(inst: SolvedInstance):
    """Min/max intensity over every active source feeding the instance."""
    values = [g.gef for g in inst.network.generators
              if inst.flow.gen_output.get(g.id, 0.0) > 1e-12]
    values.extend(w for mw, w in inst.flow.imports.values() if mw > 0.0)
    values.extend(s.intensity for s in inst.extra_sources if s.mw > 0.0)
    return (min(values), max(values)) if values else (0.0, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
