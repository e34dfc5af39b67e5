"""Lossless DC power flow, sending-end loss allocation and PTDF sensitivities.

Sign convention: every line flow is signed on the line's declared from->to
orientation. The sending end of a line is from_bus when the flow is positive
and to_bus when negative; losses are nonnegative magnitudes deducted at the
receiving end, so |received| = |sent| - loss and both ends share a sign.
Per-unit conversion happens only inside the linear solve; all public numbers
are MW.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BalanceInfeasible, SingularSystem, UnknownId
from .model import Network, Snapshot, ValidationReport, Violation, require_valid

#: Absolute MW tolerance used when deciding whether slack absorption is needed.
BALANCE_TOL_MW = 1e-6
FLOW_EPS_MW = 1e-9

#: Convergence tolerance (MW) for the loss fixed point.
_LOSS_TOL_MW = 1e-13


@dataclass(frozen=True)
class ExtraSource:
    """Auxiliary injection treated like a generator (storage discharge)."""

    id: str
    bus: str
    mw: float
    intensity: float  # ton/MWh carried by the injected power


@dataclass(frozen=True)
class ExtraLoad:
    """Auxiliary withdrawal treated like a load (storage charging)."""

    id: str
    bus: str
    mw: float


@dataclass(frozen=True)
class FlowSolution:
    """Realized network state for one timestep.

    line_flow / line_flow_received are signed on from->to; line_loss is a
    nonnegative magnitude. gen_output includes any slack-absorption adjustment.
    """

    line_flow: Mapping[str, float]
    line_loss: Mapping[str, float]
    line_flow_received: Mapping[str, float]
    gen_output: Mapping[str, float]
    load_mw: Mapping[str, float]
    imports: Mapping[str, Tuple[float, float]]
    extra_sources: Tuple[ExtraSource, ...] = ()
    extra_loads: Tuple[ExtraLoad, ...] = ()
    angles: Optional[Mapping[str, float]] = None

    def total_loss(self) -> float:
        return float(sum(self.line_loss.values()))


@dataclass(frozen=True)
class PtdfMatrix:
    """Line-by-bus sensitivities of flows to injections (withdrawal at slack)."""

    matrix: np.ndarray  # shape (n_lines, n_buses)
    line_ids: Tuple[str, ...]
    bus_ids: Tuple[str, ...]
    slack: str

    def flow_delta(self, delta_injection: Mapping[str, float]) -> dict:
        """Map a bus->MW injection change to per-line MW flow changes."""
        u = np.zeros(len(self.bus_ids))
        index = {b: i for i, b in enumerate(self.bus_ids)}
        for bus, mw in delta_injection.items():
            if bus not in index:
                raise UnknownId(f"unknown bus {bus!r} in injection delta")
            u[index[bus]] = mw
        d = self.matrix @ u
        return {line: float(d[i]) for i, line in enumerate(self.line_ids)}


@lru_cache(maxsize=256)
def _reduced_factor(network: Network):
    """LU factorization of the susceptance Laplacian with the slack removed."""
    n = len(network.bus_ids)
    idx = network.bus_index
    slack = idx[network.slack_bus]
    keep = [i for i in range(n) if i != slack]
    rows, cols, vals = [], [], []
    for line in network.lines:
        b = 1.0 / line.reactance
        i, j = idx[line.from_bus], idx[line.to_bus]
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [b, b, -b, -b]
    lap = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    red = lap[np.ix_(keep, keep)].tocsc()
    if red.shape[0] == 0:
        return None, keep, slack
    try:
        factor = spla.splu(red)
    except RuntimeError as exc:  # exactly singular factor
        raise SingularSystem(f"susceptance matrix is singular: {exc}") from exc
    return factor, keep, slack


def _solve_angles(network: Network, injection_mw: np.ndarray) -> np.ndarray:
    """Bus voltage angles (rad) for the given balanced MW injection vector."""
    factor, keep, slack = _reduced_factor(network)
    theta = np.zeros(len(network.bus_ids))
    if factor is None:
        return theta
    p_pu = injection_mw[keep] / network.base_mva
    sol = factor.solve(p_pu)
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("angle solve produced non-finite values")
    theta[keep] = sol
    return theta


def _flows_from_angles(network: Network, theta: np.ndarray) -> dict:
    idx = network.bus_index
    out = {}
    for line in network.lines:
        d = theta[idx[line.from_bus]] - theta[idx[line.to_bus]]
        out[line.id] = float(d / line.reactance * network.base_mva)
    return out


def _slack_generator(network: Network) -> Optional[str]:
    at_slack = sorted(g.id for g in network.generators if g.bus == network.slack_bus)
    return at_slack[0] if at_slack else None


def _collect_injections(network, snapshot, extra_sources, extra_loads):
    """Per-bus MW injections before slack absorption, plus resolved terms."""
    idx = network.bus_index
    inj = np.zeros(len(network.bus_ids))

    if snapshot.gen_mw is None:
        raise ValueError("solve_dc_power_flow needs snapshot.gen_mw; "
                         "dispatch first or supply setpoints")
    gen_output = {}
    for gid, mw in snapshot.gen_mw.items():
        if gid not in network.generators_by_id:
            raise UnknownId(f"unknown generator {gid!r} in snapshot")
        gen_output[gid] = float(mw)
    for g in network.generators:
        out = gen_output.setdefault(g.id, 0.0)
        inj[idx[g.bus]] += out

    load_mw = {}
    for lid, mw in snapshot.load_mw.items():
        if lid not in network.loads_by_id:
            raise UnknownId(f"unknown load {lid!r} in snapshot")
        load_mw[lid] = float(mw)
    for l in network.loads:
        mw = load_mw.setdefault(l.id, l.demand_mw)
        inj[idx[l.bus]] -= mw

    imports = {}
    if snapshot.import_injections:
        for bus, (mw, w) in snapshot.import_injections.items():
            if bus not in network.bus_index:
                raise UnknownId(f"unknown bus {bus!r} in import injections")
            imports[bus] = (float(mw), float(w))
            inj[idx[bus]] += mw

    for src in extra_sources:
        if src.bus not in idx:
            raise UnknownId(f"unknown bus {src.bus!r} on auxiliary source {src.id!r}")
        inj[idx[src.bus]] += src.mw
    for xl in extra_loads:
        if xl.bus not in idx:
            raise UnknownId(f"unknown bus {xl.bus!r} on auxiliary load {xl.id!r}")
        inj[idx[xl.bus]] -= xl.mw

    return inj, gen_output, load_mw, imports


def _absorb_at_slack(network, inj, gen_output, enforce_limits):
    """Add the residual imbalance to the slack generator's output."""
    residual = -float(inj.sum())
    if abs(residual) <= BALANCE_TOL_MW and not enforce_limits:
        # Still zero the numeric dust so angle solves stay clean.
        inj[network.bus_index[network.slack_bus]] += residual
        return residual
    sid = _slack_generator(network)
    if sid is None:
        if abs(residual) > BALANCE_TOL_MW:
            raise BalanceInfeasible(
                f"imbalance of {residual:.6f} MW but no generator at slack bus "
                f"{network.slack_bus!r} to absorb it")
        inj[network.bus_index[network.slack_bus]] += residual
        return residual
    gen_output[sid] = gen_output.get(sid, 0.0) + residual
    inj[network.bus_index[network.slack_bus]] += residual
    if enforce_limits:
        g = network.generators_by_id[sid]
        if not (g.p_min - BALANCE_TOL_MW <= gen_output[sid] <= g.p_max + BALANCE_TOL_MW):
            raise BalanceInfeasible(
                f"slack generator {sid!r} pushed to {gen_output[sid]:.6f} MW, "
                f"outside [{g.p_min}, {g.p_max}]")
    return residual


def solve_dc_power_flow(network: Network, snapshot: Snapshot, *,
                        extra_sources: Sequence[ExtraSource] = (),
                        extra_loads: Sequence[ExtraLoad] = (),
                        enforce_limits: bool = False) -> FlowSolution:
    """Lossless DC solve; any residual imbalance lands on the slack generator."""
    require_valid(network)
    extra_sources = tuple(extra_sources)
    extra_loads = tuple(extra_loads)
    inj, gen_output, load_mw, imports = _collect_injections(
        network, snapshot, extra_sources, extra_loads)
    _absorb_at_slack(network, inj, gen_output, enforce_limits)
    theta = _solve_angles(network, inj)
    flows = _flows_from_angles(network, theta)
    losses = {l: 0.0 for l in flows}
    return FlowSolution(
        line_flow=flows,
        line_loss=losses,
        line_flow_received=dict(flows),
        gen_output=gen_output,
        load_mw=load_mw,
        imports=imports,
        extra_sources=extra_sources,
        extra_loads=extra_loads,
        angles={b: float(theta[network.bus_index[b]]) for b in network.bus_ids},
    )


def apply_losses(network: Network, lossless: FlowSolution, *,
                 enforce_limits: bool = False) -> FlowSolution:
    """Apply sending-end proportional losses and re-balance via the slack.

    Losses (loss_fraction x |sending flow|) enter the linear solve as loads at
    each line's receiving bus while the slack generator covers the total, and
    the flows are re-solved to the fixed point. That keeps the nodal balance
    (received inflows + generation + imports = sent outflows + load) exact at
    every bus, which downstream carbon conservation relies on.
    """
    if all(l.loss_fraction == 0.0 for l in network.lines):
        return lossless

    idx = network.bus_index
    base_inj, gen_output, load_mw, imports = _collect_injections(
        network, Snapshot(load_mw=lossless.load_mw, gen_mw=lossless.gen_output,
                          import_injections=lossless.imports),
        lossless.extra_sources, lossless.extra_loads)
    # gen_output already carries the lossless slack absorption; the base
    # injection therefore sums to ~0 before losses are added.
    slack_i = idx[network.slack_bus]
    lines = sorted(network.lines, key=lambda l: l.id)
    loss = {l.id: 0.0 for l in lines}
    flows = dict(lossless.line_flow)
    scale = max(1.0, max((abs(f) for f in flows.values()), default=1.0))

    converged = False
    for it in range(300):
        inj = base_inj.copy()
        total = 0.0
        for line in lines:
            lv = loss[line.id]
            if lv == 0.0:
                continue
            recv_bus = line.to_bus if flows[line.id] >= 0.0 else line.from_bus
            inj[idx[recv_bus]] -= lv
            total += lv
        inj[slack_i] += total
        theta = _solve_angles(network, inj)
        flows = _flows_from_angles(network, theta)
        new_loss = {l.id: l.loss_fraction * abs(flows[l.id]) for l in lines}
        if it >= 50:  # damp in case of sign-flip oscillation
            new_loss = {k: 0.5 * (v + loss[k]) for k, v in new_loss.items()}
        delta = max(abs(new_loss[k] - loss[k]) for k in loss)
        loss = new_loss
        if delta < _LOSS_TOL_MW * scale:
            converged = True
            break
    if not converged:
        raise BalanceInfeasible("loss fixed point failed to converge")

    total = sum(loss.values())
    sid = _slack_generator(network)
    if sid is None and total > BALANCE_TOL_MW:
        raise BalanceInfeasible(
            f"losses of {total:.6f} MW but no generator at slack bus to cover them")
    if sid is not None:
        gen_output[sid] = gen_output.get(sid, 0.0) + total
        if enforce_limits:
            g = network.generators_by_id[sid]
            if not (g.p_min - BALANCE_TOL_MW <= gen_output[sid] <= g.p_max + BALANCE_TOL_MW):
                raise BalanceInfeasible(
                    f"slack generator {sid!r} pushed to {gen_output[sid]:.6f} MW "
                    f"covering losses, outside [{g.p_min}, {g.p_max}]")

    received = {}
    for line in lines:
        f = flows[line.id]
        sgn = 1.0 if f >= 0.0 else -1.0
        received[line.id] = f - sgn * loss[line.id]
    theta_map = {b: float(theta[network.bus_index[b]]) for b in network.bus_ids}
    return replace(lossless, line_flow=flows, line_loss=loss,
                   line_flow_received=received, gen_output=gen_output,
                   angles=theta_map)


def compute_ptdf(network: Network, slack: Optional[str] = None) -> PtdfMatrix:
    """Power transfer distribution factors; the slack column is all zeros."""
    require_valid(network)
    if slack is None:
        slack = network.slack_bus
    if slack not in network.bus_index:
        raise UnknownId(f"unknown slack bus {slack!r}")
    work = network if slack == network.slack_bus else replace(network, slack_bus=slack)
    factor, keep, slack_i = _reduced_factor(work)
    n = len(network.bus_ids)
    line_ids = network.line_ids
    m = len(line_ids)
    mat = np.zeros((m, n))
    if factor is not None and m:
        # Bf maps reduced angles to line flows (MW per rad, base folded in).
        idx = network.bus_index
        pos = {b_i: k for k, b_i in enumerate(keep)}
        bf = np.zeros((m, len(keep)))
        for r, lid in enumerate(line_ids):
            line = network.lines_by_id[lid]
            b = 1.0 / line.reactance
            i, j = idx[line.from_bus], idx[line.to_bus]
            if i in pos:
                bf[r, pos[i]] += b
            if j in pos:
                bf[r, pos[j]] -= b
        inv = factor.solve(np.eye(len(keep)))
        mat[:, keep] = bf @ inv
    return PtdfMatrix(matrix=mat, line_ids=line_ids,
                      bus_ids=network.bus_ids, slack=slack)


def oriented_edges(network: Network, flow: FlowSolution):
    """Realized-direction view of the flows.

    Yields (line, src_bus, dst_bus, sent, received, loss) with magnitudes.
    Flows below FLOW_EPS_MW are numerical noise from the angle solve (dead
    subtrees pick up femto-MW circulations) and count as de-energized.
    """
    for line in sorted(network.lines, key=lambda l: l.id):
        f = flow.line_flow[line.id]
        if abs(f) <= FLOW_EPS_MW:
            continue
        loss = flow.line_loss.get(line.id, 0.0)
        if f > 0.0:
            yield line, line.from_bus, line.to_bus, f, f - loss, loss
        else:
            yield line, line.to_bus, line.from_bus, -f, -f - loss, loss


def check_flow_consistency(network: Network, flow: FlowSolution,
                           tol: float = 1e-6,
                           check_capacity: bool = False) -> ValidationReport:
    """Verify nodal balance and per-line send/receive/loss identities."""
    out = []
    idx = network.bus_index
    residual = np.zeros(len(network.bus_ids))

    for g in network.generators:
        residual[idx[g.bus]] += flow.gen_output.get(g.id, 0.0)
    for l in network.loads:
        residual[idx[l.bus]] -= flow.load_mw.get(l.id, 0.0)
    for bus, (mw, _w) in flow.imports.items():
        residual[idx[bus]] += mw
    for src in flow.extra_sources:
        residual[idx[src.bus]] += src.mw
    for xl in flow.extra_loads:
        residual[idx[xl.bus]] -= xl.mw

    for line in network.lines:
        sent = flow.line_flow[line.id]
        recv = flow.line_flow_received[line.id]
        loss = flow.line_loss[line.id]
        sgn = 1.0 if sent >= 0.0 else -1.0
        if loss < -tol:
            out.append(Violation(line.id, f"line {line.id!r} has negative loss {loss}"))
        if abs(recv - (sent - sgn * loss)) > tol:
            out.append(Violation(
                line.id,
                f"line {line.id!r} received flow {recv:.9g} != sent {sent:.9g} "
                f"minus loss {loss:.9g}"))
        if sent != 0.0 and recv != 0.0 and (sent > 0.0) != (recv > 0.0):
            out.append(Violation(
                line.id, f"line {line.id!r} send/receive flows disagree in sign"))
        # Sent power leaves the sending bus; received power enters the other.
        if sent >= 0.0:
            residual[idx[line.from_bus]] -= sent
            residual[idx[line.to_bus]] += recv
        else:
            residual[idx[line.to_bus]] -= -sent
            residual[idx[line.from_bus]] += -recv
        if check_capacity and line.capacity_mw is not None:
            if abs(sent) > line.capacity_mw + tol:
                out.append(Violation(
                    line.id,
                    f"line {line.id!r} flow {abs(sent):.9g} MW exceeds capacity "
                    f"{line.capacity_mw:.9g} MW"))

    for bus in network.bus_ids:
        r = residual[idx[bus]]
        if abs(r) > tol:
            out.append(Violation(bus, f"bus {bus!r} balance residual {r:.9g} MW"))
    return ValidationReport(violations=tuple(out))
