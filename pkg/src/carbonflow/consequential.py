"""Consequential queries: what do system emissions do when something changes?

Counterfactuals re-dispatch the network-constrained least-cost problem, so
congestion is respected; under a binding corridor the response can run
backwards (more consumption in the right place displaces remote fossil
generation with local clean generation, so the emission factor goes negative).
The marginal factor is a derivative (central finite difference), the change
factor is a finite ratio between two full re-dispatches.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

from . import lp as lp_mod
from .copf import CopfProblem, DispatchResult, solve_copf_cost_adder
from .errors import NegativeLoad, UnknownId, ZeroDelta
from .model import Network, Snapshot

#: Disagreement between one-sided differences that flags a kink.
BREAKPOINT_TOL = 1e-6


class PerturbationKind(enum.Enum):
    LOAD_CHANGE = "load"
    INJECTION_CHANGE = "injection"


@dataclass(frozen=True)
class Perturbation:
    """Boundary change: target is a load id (LOAD_CHANGE) or bus id
    (INJECTION_CHANGE); delta_mw is signed."""

    target: str
    delta_mw: float
    kind: PerturbationKind = PerturbationKind.LOAD_CHANGE


@dataclass(frozen=True)
class CefResult:
    baseline_emissions: float
    perturbed_emissions: float
    delta_emissions: float
    delta_mw: float
    cef: float
    baseline: DispatchResult
    perturbed: DispatchResult

    @property
    def binding_baseline(self) -> Tuple[str, ...]:
        return self.baseline.binding_lines

    @property
    def binding_perturbed(self) -> Tuple[str, ...]:
        return self.perturbed.binding_lines


@dataclass(frozen=True)
class MefResult:
    value: float
    forward: float
    backward: float
    at_breakpoint: bool
    epsilon_mw: float


def dispatch_network_constrained(network: Network, snapshot: Snapshot,
                                 solver: Optional[lp_mod.LpSolver] = None) -> DispatchResult:
    """Least-cost dispatch with line limits; zero carbon price."""
    return solve_copf_cost_adder(CopfProblem(network=network, snapshot=snapshot),
                                 solver=solver)


def apply_perturbation(network: Network, snapshot: Snapshot,
                       perturbation: Perturbation) -> Snapshot:
    """Snapshot with the perturbation folded into its boundary data.

    Injection changes merge into the bus's import entry carbon-free (the
    combined intensity preserves the import's carbon content), so a positive
    delta models extra clean supply, a negative one a supply shortfall.
    """
    if perturbation.kind is PerturbationKind.LOAD_CHANGE:
        if perturbation.target not in network.loads_by_id:
            raise UnknownId(f"perturbation targets unknown load {perturbation.target!r}")
        load_mw = dict(snapshot.load_mw)
        base = load_mw.get(perturbation.target,
                           network.loads_by_id[perturbation.target].demand_mw)
        new = base + perturbation.delta_mw
        if new < 0.0:
            raise NegativeLoad(
                f"perturbation drives load {perturbation.target!r} to {new:.6g} MW")
        load_mw[perturbation.target] = new
        return Snapshot(load_mw=load_mw, gen_mw=snapshot.gen_mw,
                        import_injections=snapshot.import_injections,
                        timestep_index=snapshot.timestep_index,
                        delta_t=snapshot.delta_t)
    if perturbation.kind is PerturbationKind.INJECTION_CHANGE:
        if perturbation.target not in network.bus_index:
            raise UnknownId(f"perturbation targets unknown bus {perturbation.target!r}")
        imports = dict(snapshot.import_injections or {})
        mw, w = imports.get(perturbation.target, (0.0, 0.0))
        new_mw = mw + perturbation.delta_mw
        new_w = (w * mw / new_mw) if new_mw > 0.0 and mw > 0.0 else 0.0
        imports[perturbation.target] = (new_mw, new_w)
        return Snapshot(load_mw=snapshot.load_mw, gen_mw=snapshot.gen_mw,
                        import_injections=imports,
                        timestep_index=snapshot.timestep_index,
                        delta_t=snapshot.delta_t)
    raise ValueError(f"unknown perturbation kind {perturbation.kind!r}")


def compute_cef(network: Network, snapshot: Snapshot, perturbation: Perturbation,
                solver: Optional[lp_mod.LpSolver] = None) -> CefResult:
    """Carbon emission change factor: delta emissions / delta MW between the
    baseline re-dispatch and the perturbed re-dispatch."""
    if perturbation.delta_mw == 0.0:
        raise ZeroDelta("perturbation of zero MW has no defined change factor")
    baseline = dispatch_network_constrained(network, snapshot, solver)
    perturbed_snapshot = apply_perturbation(network, snapshot, perturbation)
    perturbed = dispatch_network_constrained(network, perturbed_snapshot, solver)
    delta_e = perturbed.total_emissions - baseline.total_emissions
    return CefResult(
        baseline_emissions=baseline.total_emissions,
        perturbed_emissions=perturbed.total_emissions,
        delta_emissions=delta_e,
        delta_mw=perturbation.delta_mw,
        cef=delta_e / perturbation.delta_mw,
        baseline=baseline,
        perturbed=perturbed,
    )


def compute_mef(network: Network, snapshot: Snapshot, target: str,
                epsilon_mw: float = 1e-3,
                kind: PerturbationKind = PerturbationKind.LOAD_CHANGE,
                solver: Optional[lp_mod.LpSolver] = None) -> MefResult:
    """Marginal emission factor by central finite difference.

    Forward and backward one-sided differences are compared; disagreement
    beyond BREAKPOINT_TOL flags a dispatch-order breakpoint, where the
    two-sided value is an average of two different regimes and should be
    read with care.
    """
    if epsilon_mw <= 0.0:
        raise ZeroDelta("finite-difference step must be > 0")
    base = dispatch_network_constrained(network, snapshot, solver)
    up = dispatch_network_constrained(
        network, apply_perturbation(network, snapshot,
                                    Perturbation(target, +epsilon_mw, kind)), solver)
    forward = (up.total_emissions - base.total_emissions) / epsilon_mw
    try:
        down_snap = apply_perturbation(network, snapshot,
                                       Perturbation(target, -epsilon_mw, kind))
    except NegativeLoad:
        # At the zero-demand boundary only the forward difference exists.
        return MefResult(value=forward, forward=forward, backward=forward,
                         at_breakpoint=False, epsilon_mw=epsilon_mw)
    down = dispatch_network_constrained(network, down_snap, solver)
    central = (up.total_emissions - down.total_emissions) / (2.0 * epsilon_mw)
    backward = (base.total_emissions - down.total_emissions) / epsilon_mw
    return MefResult(value=central, forward=forward, backward=backward,
                     at_breakpoint=abs(forward - backward) > BREAKPOINT_TOL,
                     epsilon_mw=epsilon_mw)
