"""Command line front end.

Every reporting subcommand writes delimited artifacts plus a run manifest into
--out, and renders matplotlib figures next to them unless --no-figures is
given. Errors derived from CarbonFlowError exit 1 with a one-line JSON object
on stderr; argument errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import figures
from .accounting import aggregate_horizon, area_average_report, attribute_emissions, compute_aef
from .consequential import Perturbation, PerturbationKind, compute_cef, compute_mef
from .copf import CopfProblem, extract_prices, solve_copf_cost_adder, solve_copf_intensity_capped
from .dcflow import apply_losses, oriented_edges, solve_dc_power_flow
from .errors import CarbonFlowError, ParseError
from .gridio import (RunConfig, fixture_path, load_grid, load_timeseries,
                     write_manifest, write_report_csv, write_report_json, write_table)
from .model import Snapshot
from .storage import simulate_horizon
from .tracing import Contract, MixingRule, check_deliverability, solve_carbon_flow

_RULES = ("proportional-sharing", "contract-priority")


def _parse_contract(text: str) -> Contract:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"contract {text!r}: expected LOAD:SOURCE:MW")
    try:
        mw = float(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"contract {text!r}: MW must be a number")
    return Contract(load_id=parts[0], source_id=parts[1], mw=mw)


def _parse_cap(text: str):
    bus, sep, value = text.rpartition(":")
    if not sep or not bus:
        raise argparse.ArgumentTypeError(
            f"intensity cap {text!r}: expected BUS:VALUE")
    try:
        return bus, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"intensity cap {text!r}: VALUE must be a number")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carbonflow",
        description="Carbon flow tracing, accounting and carbon-aware dispatch "
                    "on DC power flow networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", help="grid JSON file")
    common.add_argument("--config", help="run configuration JSON file")
    common.add_argument("--out", help="output directory for artifacts")
    common.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering")
    common.add_argument("--delta-t", type=float, default=None,
                        help="timestep length in hours (default 1)")

    series = argparse.ArgumentParser(add_help=False)
    series.add_argument("--timeseries", help="time-series CSV file")
    series.add_argument("--snapshot", type=int, default=None,
                        help="timestep t to select from the time series")
    series.add_argument("--dispatch", action="store_true",
                        help="replace given setpoints with a least-cost dispatch")

    mixing = argparse.ArgumentParser(add_help=False)
    mixing.add_argument("--rule", choices=_RULES, default=None,
                        help="mixing rule for carbon tracing")
    mixing.add_argument("--contract", action="append", type=_parse_contract,
                        default=None, metavar="LOAD:SOURCE:MW",
                        help="bilateral contract (repeatable)")

    p = sub.add_parser("validate", parents=[common],
                       help="check a grid file and print a validation report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("pf", parents=[common, series],
                       help="solve the DC power flow with losses")
    p.set_defaults(func=cmd_pf)

    p = sub.add_parser("trace", parents=[common, series, mixing],
                       help="trace carbon over a solved power flow")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("account", parents=[common, series, mixing],
                       help="attribute emissions to entities")
    p.add_argument("--method", choices=("flow-based", "area-average"),
                   default=None)
    p.add_argument("--area", default=None, help="restrict averaging to one area")
    p.add_argument("--include-imports", action="store_true")
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("aef", parents=[common, series],
                       help="average emission factor of the system or an area")
    p.add_argument("--area", default=None)
    p.add_argument("--include-imports", action="store_true")
    p.set_defaults(func=cmd_aef)

    p = sub.add_parser("cef", parents=[common, series],
                       help="consequential emission factor of a finite change")
    p.add_argument("--target", required=True, help="load or bus id to perturb")
    p.add_argument("--delta", required=True, type=float, help="change in MW")
    p.add_argument("--kind", choices=("load", "injection"), default="load")
    p.set_defaults(func=cmd_cef)

    p = sub.add_parser("mef", parents=[common, series],
                       help="marginal emission factor at the operating point")
    p.add_argument("--target", required=True)
    p.add_argument("--kind", choices=("load", "injection"), default="load")
    p.add_argument("--epsilon", type=float, default=1e-3,
                   help="finite-difference step in MW")
    p.set_defaults(func=cmd_mef)

    p = sub.add_parser("copf", parents=[common, series],
                       help="carbon-aware optimal dispatch with nodal prices")
    p.add_argument("--carbon-price", type=float, default=None,
                   help="$ per ton added to generator costs")
    p.add_argument("--intensity-cap", action="append", type=_parse_cap,
                   default=None, metavar="BUS:VALUE",
                   help="nodal consumption intensity cap (repeatable)")
    p.add_argument("--emission-cap", type=float, default=None,
                   help="system-wide emission rate cap in ton/h")
    p.set_defaults(func=cmd_copf)

    p = sub.add_parser("storage-sim", parents=[common, series, mixing],
                       help="simulate storage over a horizon and account for it")
    p.add_argument("--storage-model",
                   choices=("water_tank", "load_plus_clean_gen"), default=None,
                   help="override the emission model of every unit")
    p.set_defaults(func=cmd_storage_sim)

    p = sub.add_parser("deliverability", parents=[common, series],
                       help="check whether contracted power physically reaches a sink")
    p.add_argument("--source", required=True, help="generator id")
    p.add_argument("--sink", required=True, help="load id")
    p.add_argument("--mw", required=True, type=float)
    p.set_defaults(func=cmd_deliverability)

    return parser


# --------------------------------------------------------------------------
# shared plumbing

class _Run:
    """Arguments merged with the optional config file."""

    def __init__(self, args):
        self.args = args
        self.config = RunConfig.from_file(args.config) if getattr(args, "config", None) else None

    def opt(self, name, default=None):
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if self.config is not None:
            mapped = {"out": "output_dir", "rule": "mixing_rule",
                      "contract": "contracts", "method": "accounting_method"}
            cfg_name = mapped.get(name, name)
            if hasattr(self.config, cfg_name):
                cfg_value = getattr(self.config, cfg_name)
                if cfg_value not in (None, "", ()):
                    return cfg_value
        return default

    @property
    def grid_path(self):
        path = self.opt("grid")
        if not path:
            raise ParseError("no grid file given (use --grid or --config)")
        return path

    @property
    def delta_t(self):
        return float(self.opt("delta_t", 1.0))

    @property
    def figures_enabled(self):
        if getattr(self.args, "no_figures", False):
            return False
        if self.config is not None:
            return self.config.figures
        return True

    def out_dir(self):
        path = Path(self.opt("out", "out"))
        path.mkdir(parents=True, exist_ok=True)
        return path

    def network(self):
        return load_grid(self.grid_path)

    def timeseries(self, network):
        path = self.opt("timeseries")
        if path is None:
            return None
        return load_timeseries(path, network, delta_t=self.delta_t)

    def rule(self):
        contracts = self.opt("contract", ())
        name = self.opt("rule")
        if name is None:
            name = "contract-priority" if contracts else "proportional-sharing"
        if name == "contract-priority":
            return MixingRule.contract_priority(tuple(contracts))
        if name != "proportional-sharing":
            raise ParseError(f"unknown mixing rule {name!r}")
        if contracts:
            raise ParseError("contracts given but rule is proportional-sharing")
        return MixingRule.proportional_sharing()

    def snapshot(self, network, ts):
        """Pick one snapshot: by t from the series, or network defaults."""
        if ts is None:
            return Snapshot(load_mw={l.id: l.demand_mw for l in network.loads},
                            gen_mw=None, delta_t=self.delta_t)
        want = self.opt("snapshot")
        if want is None:
            return ts.snapshots[0]
        for snap in ts.snapshots:
            if snap.timestep_index == want:
                return snap
        raise ParseError(f"time series has no row with t={want}")

    def echo(self, command):
        base = self.config.echo() if self.config else RunConfig().echo()
        base["grid"] = str(self.grid_path)
        ts = self.opt("timeseries")
        if ts is not None:
            base["timeseries"] = str(ts)
        base["delta_t"] = self.delta_t
        base["figures"] = self.figures_enabled
        for name in ("area", "carbon_price", "emission_cap", "snapshot",
                     "target", "delta", "kind", "epsilon", "storage_model",
                     "source", "sink", "mw", "method"):
            value = getattr(self.args, name, None)
            if value is not None:
                base[name] = value
        contracts = self.opt("contract", ())
        if contracts:
            base["contracts"] = [[c.load_id, c.source_id, c.mw] for c in contracts]
            base["mixing_rule"] = self.rule().kind
        return base

    def inputs(self):
        pairs = [("grid", self.grid_path)]
        ts = self.opt("timeseries")
        if ts is not None:
            pairs.append(("timeseries", ts))
        if getattr(self.args, "config", None):
            pairs.append(("config", self.args.config))
        return pairs

    def finish(self, command, out):
        write_manifest(out, command, self.echo(command), self.inputs())


def _resolve_flow(run, network, snap):
    """Dispatch if setpoints are absent (or forced), then solve with losses."""
    dispatched = None
    if snap.gen_mw is None or getattr(run.args, "dispatch", False):
        result = solve_copf_cost_adder(CopfProblem(network, snap, carbon_price=0.0))
        dispatched = result
        snap = replace(snap, gen_mw=result.setpoints)
    lossless = solve_dc_power_flow(network, snap)
    return apply_losses(network, lossless), snap, dispatched


def _flow_rows(network, flow):
    rows = []
    seen = set()
    for line, src, dst, sent, recv, loss in oriented_edges(network, flow):
        rows.append((line.id, src, dst, float(sent), float(recv), float(loss)))
        seen.add(line.id)
    for line in sorted(network.lines, key=lambda l: l.id):
        if line.id not in seen:
            rows.append((line.id, line.from_bus, line.to_bus, 0.0, 0.0, 0.0))
    rows.sort(key=lambda r: r[0])
    return rows


def _write_flow_artifacts(run, out, network, flow):
    write_table(out / "flows.csv",
                ("line_id", "from_bus", "to_bus", "sent_mw", "received_mw", "loss_mw"),
                _flow_rows(network, flow))
    write_table(out / "dispatch.csv", ("generator_id", "bus", "mw"),
                [(g, network.generators_by_id[g].bus, float(flow.gen_output[g]))
                 for g in sorted(flow.gen_output)])
    if run.figures_enabled:
        figures.plot_line_flows(flow.line_flow,
                                {l.id: l.capacity_mw for l in network.lines},
                                out / "flows.png")


# --------------------------------------------------------------------------
# commands

def cmd_validate(args) -> int:
    run = _Run(args)
    from .errors import ValidationFailed
    from .model import validate_network
    try:
        network = run.network()
        report = validate_network(network)
    except ValidationFailed as exc:
        report = exc.report
    payload = {"ok": report.ok,
               "violations": [{"element": v.element_id, "message": v.message}
                              for v in report.violations]}
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        out = run.out_dir()
        (out / "validation.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        run.finish("validate", out)
    return 0 if report.ok else 1


def cmd_pf(args) -> int:
    run = _Run(args)
    network = run.network()
    snap = run.snapshot(network, run.timeseries(network))
    flow, snap, _ = _resolve_flow(run, network, snap)
    out = run.out_dir()
    _write_flow_artifacts(run, out, network, flow)
    run.finish("pf", out)
    summary = {"total_load_mw": sum(flow.load_mw.values()),
               "total_generation_mw": sum(flow.gen_output.values()),
               "total_loss_mw": flow.total_loss(),
               "out": str(out)}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _trace(run, network, snap):
    flow, snap, _ = _resolve_flow(run, network, snap)
    carbon = solve_carbon_flow(network, flow, rule=run.rule())
    return flow, carbon


def cmd_trace(args) -> int:
    run = _Run(args)
    network = run.network()
    snap = run.snapshot(network, run.timeseries(network))
    flow, carbon = _trace(run, network, snap)
    out = run.out_dir()
    _write_flow_artifacts(run, out, network, flow)
    write_table(out / "node_intensity.csv", ("bus", "intensity_ton_per_mwh"),
                [(b, float(carbon.node_intensity[b]))
                 for b in sorted(carbon.node_intensity)])
    write_table(out / "branch_carbon.csv",
                ("line_id", "intensity_ton_per_mwh", "carbon_sent_ton_per_h",
                 "carbon_received_ton_per_h", "carbon_loss_ton_per_h"),
                [(l, float(carbon.branch_intensity[l]),
                  float(carbon.branch_carbon_sent[l]),
                  float(carbon.branch_carbon_received[l]),
                  float(carbon.branch_carbon_loss[l]))
                 for l in sorted(carbon.branch_intensity)])
    if run.figures_enabled:
        figures.plot_node_intensity(carbon.node_intensity, out / "node_intensity.png")
    run.finish("trace", out)
    summary = {"rule": carbon.rule.kind,
               "total_generation_emissions_ton_per_h": carbon.total_generation_emissions(),
               "total_consumption_emissions_ton_per_h": carbon.total_consumption_emissions(),
               "total_loss_emissions_ton_per_h": carbon.total_loss_emissions(),
               "out": str(out)}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_account(args) -> int:
    run = _Run(args)
    network = run.network()
    ts = run.timeseries(network)
    method = run.opt("method", "flow-based")
    horizon = ts is not None and run.opt("snapshot") is None and len(ts.snapshots) > 1
    if method == "area-average":
        include = bool(args.include_imports or
                       (run.config and run.config.include_imports))
        snaps = ts.snapshots if horizon else [run.snapshot(network, ts)]
        reports = []
        for snap in snaps:
            flow, snap, _ = _resolve_flow(run, network, snap)
            reports.append(area_average_report(
                network, flow, delta_t=snap.delta_t, timestep=snap.timestep_index,
                include_imports=include))
        report = aggregate_horizon(reports) if len(reports) > 1 else reports[0]
    elif horizon:
        result = simulate_horizon(network, ts.snapshots, ts.storage_schedule,
                                  rule=run.rule())
        report = result.aggregate
    else:
        snap = run.snapshot(network, ts)
        flow, carbon = _trace(run, network, snap)
        report = attribute_emissions(carbon, delta_t=snap.delta_t,
                                     timestep=snap.timestep_index)
    out = run.out_dir()
    write_report_csv(report, out / "report.csv")
    write_report_json(report, out / "report.json")
    if run.figures_enabled:
        figures.plot_emission_report(report, out / "report.png")
    run.finish("account", out)
    summary = {"method": report.method,
               "timesteps": list(report.timesteps),
               "scope1_total_ton": report.total(scope=1),
               "scope2_total_ton": report.total(scope=2),
               "out": str(out)}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_aef(args) -> int:
    run = _Run(args)
    network = run.network()
    snap = run.snapshot(network, run.timeseries(network))
    flow, snap, _ = _resolve_flow(run, network, snap)
    include = bool(args.include_imports or (run.config and run.config.include_imports))
    area = run.opt("area")
    aef = compute_aef(network, flow.gen_output, imports=flow.imports,
                      area=area, include_imports=include)
    payload = {"aef_ton_per_mwh": aef, "area": area,
               "include_imports": include}
    if args.out or (run.config and run.config.output_dir and args.config):
        out = run.out_dir()
        (out / "aef.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        run.finish("aef", out)
        payload["out"] = str(out)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _perturbation(args):
    kind = (PerturbationKind.LOAD_CHANGE if args.kind == "load"
            else PerturbationKind.INJECTION_CHANGE)
    return Perturbation(target=args.target, delta_mw=args.delta, kind=kind)


def cmd_cef(args) -> int:
    run = _Run(args)
    network = run.network()
    snap = run.snapshot(network, run.timeseries(network))
    result = compute_cef(network, snap, _perturbation(args))
    payload = {"cef_ton_per_mwh": result.cef,
               "delta_mw": result.delta_mw,
               "delta_emissions_ton_per_h": result.delta_emissions,
               "baseline_emissions_ton_per_h": result.baseline_emissions,
               "perturbed_emissions_ton_per_h": result.perturbed_emissions,
               "binding_lines_baseline": list(result.binding_baseline),
               "binding_lines_perturbed": list(result.binding_perturbed)}
    if args.out:
        out = run.out_dir()
        (out / "cef.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        run.finish("cef", out)
        payload["out"] = str(out)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_mef(args) -> int:
    run = _Run(args)
    network = run.network()
    snap = run.snapshot(network, run.timeseries(network))
    kind = (PerturbationKind.LOAD_CHANGE if args.kind == "load"
            else PerturbationKind.INJECTION_CHANGE)
    result = compute_mef(network, snap, args.target, kind=kind,
                         epsilon_mw=args.epsilon)
    payload = {"mef_ton_per_mwh": result.value,
               "forward_ton_per_mwh": result.forward,
               "backward_ton_per_mwh": result.backward,
               "at_breakpoint": result.at_breakpoint,
               "epsilon_mw": result.epsilon_mw}
    if args.out:
        out = run.out_dir()
        (out / "mef.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        run.finish("mef", out)
        payload["out"] = str(out)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_copf(args) -> int:
    run = _Run(args)
    network = run.network()
    snap = run.snapshot(network, run.timeseries(network))
    price = float(run.opt("carbon_price", 0.0))
    caps = dict(args.intensity_cap or [])
    if not caps and run.config:
        caps = dict(run.config.nodal_intensity_caps)
    emission_cap = run.opt("emission_cap")
    if emission_cap is None and run.config:
        emission_cap = run.config.total_emission_cap
    problem = CopfProblem(network, snap, carbon_price=price,
                          nodal_intensity_caps=caps,
                          total_emission_cap=emission_cap)
    if caps:
        result = solve_copf_intensity_capped(problem)
    else:
        result = solve_copf_cost_adder(problem)
    prices = extract_prices(result, problem)
    baseline_lmp = None
    if price > 0.0:
        base = solve_copf_cost_adder(replace(problem, carbon_price=0.0))
        baseline_lmp = base.lmp
    out = run.out_dir()
    write_table(out / "dispatch.csv", ("generator_id", "bus", "mw"),
                [(g, network.generators_by_id[g].bus, float(result.setpoints[g]))
                 for g in sorted(result.setpoints)])
    write_table(out / "flows.csv", ("line_id", "flow_mw", "binding"),
                [(l, float(result.line_flows[l]),
                  "yes" if l in result.binding_lines else "no")
                 for l in sorted(result.line_flows)])
    price_rows = []
    for bus in sorted(result.lmp):
        row = [bus, float(result.lmp[bus]), float(prices.energy_component),
               float(prices.congestion_component[bus])]
        if baseline_lmp is not None:
            row.append(float(baseline_lmp[bus]))
        price_rows.append(tuple(row))
    headers = ["bus", "price_per_mwh", "energy_component", "congestion_component"]
    if baseline_lmp is not None:
        headers.append("cost_only_price_per_mwh")
    write_table(out / "prices.csv", headers, price_rows)
    if run.figures_enabled:
        if baseline_lmp is not None:
            figures.plot_prices(baseline_lmp, result.lmp, out / "prices.png",
                                title=f"Nodal prices (carbon price {price:g} $/ton)")
        else:
            figures.plot_prices(result.lmp, None, out / "prices.png")
        figures.plot_line_flows(result.line_flows,
                                {l.id: l.capacity_mw for l in network.lines},
                                out / "flows.png")
    run.finish("copf", out)
    summary = {"objective": result.objective,
               "total_cost_per_h": result.total_cost,
               "total_emissions_ton_per_h": result.total_emissions,
               "binding_lines": list(result.binding_lines),
               "iterations": len(result.iterations),
               "out": str(out)}
    if result.emission_cap_dual is not None:
        summary["emission_cap_dual"] = result.emission_cap_dual
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_storage_sim(args) -> int:
    run = _Run(args)
    network = run.network()
    ts = run.timeseries(network)
    if ts is None:
        raise ParseError("storage-sim needs --timeseries")
    from .model import StorageModel
    override = StorageModel(args.storage_model) if args.storage_model else None
    result = simulate_horizon(network, ts.snapshots, ts.storage_schedule,
                              rule=run.rule(), model_override=override)
    out = run.out_dir()
    write_report_csv(result.aggregate, out / "report.csv")
    write_report_json(result.aggregate, out / "report.json")
    state_rows = []
    for uid in sorted(result.states):
        for t, state in enumerate(result.states[uid]):
            state_rows.append((uid, t, float(state.energy_mwh),
                               float(state.carbon_ton), float(state.intensity)))
    write_table(out / "storage_states.csv",
                ("unit_id", "after_step", "energy_mwh", "carbon_ton",
                 "intensity_ton_per_mwh"), state_rows)
    if run.figures_enabled:
        if result.states:
            figures.plot_storage_trajectory(result.states, out / "storage.png")
        figures.plot_emission_report(result.aggregate, out / "report.png")
    run.finish("storage-sim", out)
    final = {uid: {"energy_mwh": seq[-1].energy_mwh,
                   "carbon_ton": seq[-1].carbon_ton}
             for uid, seq in sorted(result.states.items())}
    summary = {"timesteps": list(result.aggregate.timesteps),
               "scope1_total_ton": result.aggregate.total(scope=1),
               "scope2_total_ton": result.aggregate.total(scope=2),
               "final_states": final,
               "out": str(out)}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_deliverability(args) -> int:
    run = _Run(args)
    network = run.network()
    snap = run.snapshot(network, run.timeseries(network))
    flow, snap, _ = _resolve_flow(run, network, snap)
    verdict = check_deliverability(
        network, flow,
        Contract(load_id=args.sink, source_id=args.source, mw=args.mw))
    payload = {"deliverable": verdict.deliverable,
               "requested_mw": verdict.requested_mw,
               "max_deliverable_mw": verdict.max_deliverable_mw,
               "bottleneck_lines": list(verdict.bottleneck_lines)}
    if args.out:
        out = run.out_dir()
        (out / "deliverability.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        run.finish("deliverability", out)
        payload["out"] = str(out)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except CarbonFlowError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
