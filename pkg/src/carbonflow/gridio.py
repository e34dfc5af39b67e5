"""File formats: grid JSON, time-series CSV, report artifacts, run manifest.

Grid schema id is "carbonflow-grid/1"; validation is strict (unknown keys
rejected) and every schema message carries a JSON-pointer location. All float
output is fixed at nine significant digits with '.' as the decimal separator,
so identical runs produce byte-identical delimited files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, fields as dc_fields
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence, Tuple

from .errors import (NegativeLoad, ParseError, SchemaError, UnknownColumn,
                     ValidationFailed)
from .model import (Bus, Generator, Line, Load, Network, Snapshot, StorageModel,
                    StorageUnit, validate_network)
from .tracing import Contract

SCHEMA_ID = "carbonflow-grid/1"
VERSION = "0.1.0"


def format_number(x: float) -> str:
    """Nine significant digits, stable across runs (no negative zero)."""
    x = float(x)
    if x == 0.0:
        x = 0.0
    return f"{x:.9g}"


# --------------------------------------------------------------------------
# grid JSON

_STRING = ("string", str)
_NUMBER = ("number", (int, float))
_NUMBER_OR_NULL = ("number or null", (int, float, type(None)))

# field -> (required, (label, accepted types), default)
_BUS_FIELDS = {"id": (True, _STRING, None), "name": (False, _STRING, ""),
               "area": (False, _STRING, "")}
_LINE_FIELDS = {"id": (True, _STRING, None), "from_bus": (True, _STRING, None),
                "to_bus": (True, _STRING, None), "reactance": (True, _NUMBER, None),
                "capacity_mw": (False, _NUMBER_OR_NULL, None),
                "loss_fraction": (False, _NUMBER, 0.0)}
_GEN_FIELDS = {"id": (True, _STRING, None), "bus": (True, _STRING, None),
               "gef": (True, _NUMBER, None), "p_min": (False, _NUMBER, 0.0),
               "p_max": (True, _NUMBER, None), "marginal_cost": (False, _NUMBER, 0.0),
               "fuel_label": (False, _STRING, "")}
_LOAD_FIELDS = {"id": (True, _STRING, None), "bus": (True, _STRING, None),
                "demand_mw": (False, _NUMBER, 0.0)}
_STORAGE_FIELDS = {"id": (True, _STRING, None), "bus": (True, _STRING, None),
                   "energy_capacity_mwh": (True, _NUMBER, None),
                   "power_limit_mw": (True, _NUMBER, None),
                   "emission_model": (False, _STRING, "water_tank")}


def _check_element(obj, spec, pointer, errors):
    if not isinstance(obj, dict):
        errors.append((pointer, "expected an object"))
        return None
    out = {}
    for key in obj:
        if key not in spec:
            errors.append((f"{pointer}/{key}", "unknown key"))
    ok = True
    for name, (required, (label, types), default) in spec.items():
        if name in obj:
            value = obj[name]
            if isinstance(value, bool) or not isinstance(value, types):
                errors.append((f"{pointer}/{name}", f"expected {label}"))
                ok = False
            else:
                out[name] = value
        elif required:
            errors.append((pointer, f"missing required key {name!r}"))
            ok = False
        else:
            out[name] = default
    return out if ok else None


def parse_grid(data, source: str = "<memory>") -> Network:
    """Build a Network from decoded grid JSON; strict against the schema."""
    errors = []
    if not isinstance(data, dict):
        raise SchemaError([("", "top level must be an object")])
    known_top = {"schema", "base_mva", "slack_bus", "buses", "lines",
                 "generators", "loads", "storage"}
    for key in data:
        if key not in known_top:
            errors.append((f"/{key}", "unknown key"))
    schema = data.get("schema")
    if schema != SCHEMA_ID:
        errors.append(("/schema", f"expected {SCHEMA_ID!r}, got {schema!r}"))
    slack = data.get("slack_bus")
    if not isinstance(slack, str):
        errors.append(("/slack_bus", "expected string"))
        slack = ""
    base = data.get("base_mva", 100.0)
    if isinstance(base, bool) or not isinstance(base, (int, float)):
        errors.append(("/base_mva", "expected number"))
        base = 100.0

    def element_list(key, spec, build):
        items = data.get(key, [])
        if not isinstance(items, list):
            errors.append((f"/{key}", "expected an array"))
            return []
        out = []
        for i, raw in enumerate(items):
            values = _check_element(raw, spec, f"/{key}/{i}", errors)
            if values is not None:
                built = build(values, f"/{key}/{i}")
                if built is not None:
                    out.append(built)
        return out

    buses = element_list("buses", _BUS_FIELDS, lambda v, p: Bus(
        id=v["id"], name=v["name"], area=v["area"]))
    lines = element_list("lines", _LINE_FIELDS, lambda v, p: Line(
        id=v["id"], from_bus=v["from_bus"], to_bus=v["to_bus"],
        reactance=float(v["reactance"]),
        capacity_mw=None if v["capacity_mw"] is None else float(v["capacity_mw"]),
        loss_fraction=float(v["loss_fraction"])))
    gens = element_list("generators", _GEN_FIELDS, lambda v, p: Generator(
        id=v["id"], bus=v["bus"], gef=float(v["gef"]), p_min=float(v["p_min"]),
        p_max=float(v["p_max"]), marginal_cost=float(v["marginal_cost"]),
        fuel_label=v["fuel_label"]))
    loads = element_list("loads", _LOAD_FIELDS, lambda v, p: Load(
        id=v["id"], bus=v["bus"], demand_mw=float(v["demand_mw"])))

    def build_storage(v, pointer):
        try:
            model = StorageModel(v["emission_model"])
        except ValueError:
            errors.append((f"{pointer}/emission_model",
                           f"expected one of {[m.value for m in StorageModel]}, "
                           f"got {v['emission_model']!r}"))
            return None
        return StorageUnit(id=v["id"], bus=v["bus"],
                           energy_capacity_mwh=float(v["energy_capacity_mwh"]),
                           power_limit_mw=float(v["power_limit_mw"]),
                           emission_model=model)

    storage = element_list("storage", _STORAGE_FIELDS, build_storage)
    if "buses" not in data:
        errors.append(("", "missing required key 'buses'"))
    if errors:
        raise SchemaError(errors)

    network = Network(buses=tuple(buses), lines=tuple(lines), generators=tuple(gens),
                      loads=tuple(loads), storage_units=tuple(storage),
                      slack_bus=slack, base_mva=float(base))
    report = validate_network(network)
    if not report.ok:
        raise ValidationFailed(report)
    return network


def load_grid(path) -> Network:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read grid file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"grid file {path} is not valid JSON: {exc}") from exc
    return parse_grid(data, source=str(path))


def serialize_grid(network: Network) -> dict:
    """Canonical dict form (elements sorted by id); load/save round-trips."""
    return {
        "schema": SCHEMA_ID,
        "base_mva": network.base_mva,
        "slack_bus": network.slack_bus,
        "buses": [{"id": b.id, "name": b.name, "area": b.area}
                  for b in sorted(network.buses, key=lambda b: b.id)],
        "lines": [{"id": l.id, "from_bus": l.from_bus, "to_bus": l.to_bus,
                   "reactance": l.reactance, "capacity_mw": l.capacity_mw,
                   "loss_fraction": l.loss_fraction}
                  for l in sorted(network.lines, key=lambda l: l.id)],
        "generators": [{"id": g.id, "bus": g.bus, "gef": g.gef, "p_min": g.p_min,
                        "p_max": g.p_max, "marginal_cost": g.marginal_cost,
                        "fuel_label": g.fuel_label}
                       for g in sorted(network.generators, key=lambda g: g.id)],
        "loads": [{"id": l.id, "bus": l.bus, "demand_mw": l.demand_mw}
                  for l in sorted(network.loads, key=lambda l: l.id)],
        "storage": [{"id": s.id, "bus": s.bus,
                     "energy_capacity_mwh": s.energy_capacity_mwh,
                     "power_limit_mw": s.power_limit_mw,
                     "emission_model": s.emission_model.value}
                    for s in sorted(network.storage_units, key=lambda s: s.id)],
    }


def save_grid(network: Network, path) -> None:
    Path(path).write_text(json.dumps(serialize_grid(network), indent=2) + "\n",
                          encoding="utf-8")


# --------------------------------------------------------------------------
# time-series CSV

_COLUMN_KINDS = ("load", "gen", "storage", "import", "import_w")


@dataclass(frozen=True)
class TimeSeries:
    snapshots: Tuple[Snapshot, ...]
    storage_schedule: Mapping[str, Tuple[float, ...]]


def load_timeseries(path, network: Network, delta_t: float = 1.0) -> TimeSeries:
    """Parse `t,<kind>:<id>,...` rows into snapshots plus storage schedules."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read time series {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ParseError(f"time series {path} is empty")
    header = rows[0]
    if not header or header[0].strip() != "t":
        raise ParseError(f"time series {path}: first column must be 't'")
    columns = []  # (kind, id) per non-t column
    seen = set()
    for col in header[1:]:
        col = col.strip()
        if ":" not in col:
            raise UnknownColumn(f"column {col!r}: expected '<kind>:<id>'")
        kind, _, ident = col.partition(":")
        if kind not in _COLUMN_KINDS:
            raise UnknownColumn(f"column {col!r}: unknown kind {kind!r}")
        valid = {"load": network.loads_by_id, "gen": network.generators_by_id,
                 "storage": network.storage_by_id, "import": network.bus_index,
                 "import_w": network.bus_index}[kind]
        if ident not in valid:
            raise UnknownColumn(f"column {col!r}: unknown id {ident!r}")
        if (kind, ident) in seen:
            raise ParseError(f"duplicate column {col!r}")
        seen.add((kind, ident))
        columns.append((kind, ident))

    has_gen = any(kind == "gen" for kind, _ in columns)
    snapshots = []
    schedule = {ident: [] for kind, ident in columns if kind == "storage"}
    last_t = None
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        try:
            t_raw = float(row[0])
        except ValueError as exc:
            raise ParseError(f"row {r}: timestep {row[0]!r} is not a number") from exc
        t = int(t_raw)
        if t != t_raw:
            raise ParseError(f"row {r}: timestep must be an integer, got {row[0]!r}")
        if last_t is not None and t <= last_t:
            raise ParseError(f"row {r}: timesteps must be strictly ascending")
        last_t = t
        values = {}
        for (kind, ident), cell in zip(columns, row[1:]):
            cell = cell.strip()
            if cell == "":
                continue
            try:
                values[(kind, ident)] = float(cell)
            except ValueError as exc:
                raise ParseError(
                    f"row {r}, column {kind}:{ident}: {cell!r} is not a number") from exc
        load_mw = {}
        for l in network.loads:
            v = values.get(("load", l.id), l.demand_mw)
            if v < 0.0:
                raise NegativeLoad(f"row {r}: load {l.id!r} is negative ({v:g})")
            load_mw[l.id] = v
        gen_mw = None
        if has_gen:
            gen_mw = {g.id: values.get(("gen", g.id), 0.0) for g in network.generators}
        import_buses = sorted({ident for kind, ident in columns
                               if kind in ("import", "import_w")})
        imports = None
        if import_buses:
            imports = {b: (values.get(("import", b), 0.0),
                           values.get(("import_w", b), 0.0))
                       for b in import_buses}
        snapshots.append(Snapshot(load_mw=load_mw, gen_mw=gen_mw,
                                  import_injections=imports,
                                  timestep_index=t, delta_t=delta_t))
        for uid in schedule:
            schedule[uid].append(values.get(("storage", uid), 0.0))
    if not snapshots:
        raise ParseError(f"time series {path} has no data rows")
    return TimeSeries(snapshots=tuple(snapshots),
                      storage_schedule={k: tuple(v) for k, v in schedule.items()})


# --------------------------------------------------------------------------
# artifacts

def write_table(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """Delimited output with fixed number formatting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(c) if isinstance(c, float) else c
                             for c in row])


def write_report_csv(report, path) -> None:
    rows = [(r.entity_id, r.kind, r.scope, float(r.energy_mwh),
             float(r.emissions_ton), report.method) for r in report.records]
    write_table(path, ("entity_id", "kind", "scope", "energy_mwh",
                       "emissions_ton", "method"), rows)


def write_report_json(report, path) -> None:
    payload = {
        "method": report.method,
        "timesteps": list(report.timesteps),
        "records": [{"entity_id": r.entity_id, "kind": r.kind, "scope": r.scope,
                     "energy_mwh": r.energy_mwh, "emissions_ton": r.emissions_ton}
                    for r in report.records],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(out_dir, command: str, config_echo: Mapping,
                   inputs: Sequence[Tuple[str, str]]) -> None:
    manifest = {
        "tool": "carbonflow",
        "version": VERSION,
        "command": command,
        "config": dict(config_echo),
        "inputs": {label: {"path": str(p), "sha256": sha256_file(p)}
                   for label, p in inputs},
    }
    Path(out_dir, "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class RunConfig:
    grid: str = ""
    timeseries: Optional[str] = None
    output_dir: str = "out"
    mixing_rule: str = "proportional-sharing"
    contracts: Tuple[Contract, ...] = ()
    carbon_price: float = 0.0
    nodal_intensity_caps: Mapping[str, float] = field(default_factory=dict)
    total_emission_cap: Optional[float] = None
    accounting_method: str = "flow-based"
    include_imports: bool = False
    area: Optional[str] = None
    delta_t: float = 1.0
    balance_tol_mw: float = 1e-6
    seed: int = 0
    figures: bool = True

    @staticmethod
    def from_file(path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ParseError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise SchemaError([("", "config must be an object")])
        known = {f.name for f in dc_fields(RunConfig)}
        errors = [(f"/{k}", "unknown key") for k in data if k not in known]
        if errors:
            raise SchemaError(errors)
        if "contracts" in data:
            raw = data["contracts"]
            if not isinstance(raw, list):
                raise SchemaError([("/contracts", "expected an array")])
            contracts = []
            for i, item in enumerate(raw):
                if (not isinstance(item, list)) or len(item) != 3:
                    raise SchemaError([(f"/contracts/{i}",
                                        "expected [load_id, source_id, mw]")])
                contracts.append(Contract(load_id=str(item[0]),
                                          source_id=str(item[1]),
                                          mw=float(item[2])))
            data["contracts"] = tuple(contracts)
            # contracts imply the contract rule unless one is named explicitly
            if contracts and "mixing_rule" not in data:
                data["mixing_rule"] = "contract-priority"
        return RunConfig(**data)

    def echo(self) -> dict:
        return {
            "grid": self.grid,
            "timeseries": self.timeseries,
            "output_dir": self.output_dir,
            "mixing_rule": self.mixing_rule,
            "contracts": [[c.load_id, c.source_id, c.mw] for c in self.contracts],
            "carbon_price": self.carbon_price,
            "nodal_intensity_caps": dict(self.nodal_intensity_caps),
            "total_emission_cap": self.total_emission_cap,
            "accounting_method": self.accounting_method,
            "include_imports": self.include_imports,
            "area": self.area,
            "delta_t": self.delta_t,
            "balance_tol_mw": self.balance_tol_mw,
            "seed": self.seed,
            "figures": self.figures,
        }


def fixture_path(name: str) -> Path:
    """Path to a bundled example grid or time series."""
    base = resources.files("carbonflow") / "fixtures" / name
    with resources.as_file(base) as p:
        return Path(p)
