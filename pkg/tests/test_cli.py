import json

import pytest

from carbonflow.cli import main
from carbonflow.gridio import fixture_path

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def fx(name):
    return str(fixture_path(name))


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def out_json(text):
    return json.loads(text)


def csv_rows(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


# ---------------------------------------------------------------- validate


def test_validate_ok(capsys):
    code, out, _ = run(capsys, "validate", "--grid", fx("fig5_three_node.json"))
    assert code == 0
    assert out_json(out) == {"ok": True, "violations": []}


def test_validate_reports_semantic_failures(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    grid = json.loads(fixture_path("fig4_grid1.json").read_text())
    grid["lines"][0]["to_bus"] = "ghost"
    bad.write_text(json.dumps(grid))
    code, out, _ = run(capsys, "validate", "--grid", str(bad))
    assert code == 1
    payload = out_json(out)
    assert payload["ok"] is False
    assert payload["violations"]


def test_validate_schema_error_goes_to_stderr(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": "wrong"}')
    code, _, err = run(capsys, "validate", "--grid", str(bad))
    assert code == 1
    assert out_json(err)["error"] == "SchemaError"


def test_validate_writes_artifacts_when_out_given(capsys, tmp_path):
    out = tmp_path / "v"
    code, _, _ = run(capsys, "validate", "--grid", fx("fig5_three_node.json"),
                     "--out", str(out))
    assert code == 0
    assert (out / "validation.json").is_file()
    assert (out / "run_manifest.json").is_file()


# ---------------------------------------------------------------- pf / trace


def test_pf_dispatches_and_writes_artifacts(capsys, tmp_path):
    out = tmp_path / "pf"
    code, stdout, _ = run(capsys, "pf", "--grid", fx("fig5_three_node.json"),
                          "--out", str(out))
    assert code == 0
    summary = out_json(stdout)
    assert summary["total_load_mw"] == pytest.approx(300.0)
    assert summary["total_generation_mw"] == pytest.approx(300.0)
    by_gen = {r["generator_id"]: float(r["mw"])
              for r in csv_rows(out / "dispatch.csv")}
    assert by_gen == {"G1": pytest.approx(150.0), "G3": pytest.approx(150.0)}
    assert {"flows.csv", "dispatch.csv", "run_manifest.json",
            "flows.png"} <= {p.name for p in out.iterdir()}
    assert (out / "flows.png").read_bytes()[:8] == PNG_MAGIC


def test_no_figures_suppresses_pngs(capsys, tmp_path):
    out = tmp_path / "pf"
    code, _, _ = run(capsys, "pf", "--grid", fx("fig5_three_node.json"),
                     "--out", str(out), "--no-figures")
    assert code == 0
    assert not list(out.glob("*.png"))


def test_trace_outputs_node_intensities(capsys, tmp_path):
    out = tmp_path / "tr"
    code, stdout, _ = run(capsys, "trace", "--grid", fx("fig4_grid1.json"),
                          "--out", str(out))
    assert code == 0
    intensity = {r["bus"]: r["intensity_ton_per_mwh"]
                 for r in csv_rows(out / "node_intensity.csv")}
    assert intensity == {"a": "0.9", "b": "0"}
    assert (out / "branch_carbon.csv").is_file()
    assert (out / "node_intensity.png").read_bytes()[:8] == PNG_MAGIC
    summary = out_json(stdout)
    assert summary["total_generation_emissions_ton_per_h"] == pytest.approx(45.0)


def test_trace_runs_are_byte_identical(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        code, _, _ = run(capsys, "trace", "--grid", fx("fig4_grid2.json"),
                         "--out", str(out), "--no-figures")
        assert code == 0
    for name in ("flows.csv", "dispatch.csv", "node_intensity.csv",
                 "branch_carbon.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


# ---------------------------------------------------------------- account


def test_account_flow_based_single_snapshot(capsys, tmp_path):
    out = tmp_path / "acc"
    code, stdout, _ = run(capsys, "account", "--grid", fx("fig2_counterexample.json"),
                          "--out", str(out))
    assert code == 0
    summary = out_json(stdout)
    assert summary["method"] == "flow-based:proportional-sharing"
    assert summary["scope1_total_ton"] == pytest.approx(50.0)
    assert summary["scope2_total_ton"] == pytest.approx(50.0)
    records = out_json((out / "report.json").read_text())["records"]
    loads = {r["entity_id"]: r["emissions_ton"] for r in records
             if r["kind"] == "load"}
    assert loads["LA"] == pytest.approx(0.0)
    assert loads["LB"] == pytest.approx(50.0)
    assert (out / "report.csv").is_file()
    assert (out / "report.png").read_bytes()[:8] == PNG_MAGIC


def test_account_contract_reroutes_attribution(capsys, tmp_path):
    out = tmp_path / "acc"
    code, stdout, _ = run(capsys, "account", "--grid", fx("fig4_grid2.json"),
                          "--out", str(out), "--no-figures",
                          "--contract", "L1:G2:30")
    assert code == 0
    assert out_json(stdout)["method"] == "flow-based:contract-priority"
    records = out_json((out / "report.json").read_text())["records"]
    loads = {r["entity_id"]: r["emissions_ton"] for r in records
             if r["kind"] == "load"}
    assert loads["L1"] == pytest.approx(0.0, abs=1e-9)
    assert loads["L2"] == pytest.approx(54.0, abs=1e-9)


def test_account_contract_with_proportional_rule_is_an_error(capsys):
    code, _, err = run(capsys, "account", "--grid", fx("fig4_grid2.json"),
                       "--rule", "proportional-sharing", "--contract", "L1:G2:30",
                       "--no-figures")
    assert code == 1
    assert out_json(err)["error"] == "ParseError"


def test_account_area_average_method(capsys, tmp_path):
    out = tmp_path / "acc"
    code, stdout, _ = run(capsys, "account", "--grid", fx("fig2_counterexample.json"),
                          "--out", str(out), "--no-figures",
                          "--method", "area-average")
    assert code == 0
    summary = out_json(stdout)
    assert summary["method"] == "area-average"
    records = out_json((out / "report.json").read_text())["records"]
    by_id = {r["entity_id"]: r["emissions_ton"] for r in records}
    # pool accounting: each load pays its own area's average, so the clean
    # west import to LB vanishes and a grid residual reconciles the books
    assert by_id["LA"] == pytest.approx(0.0)
    assert by_id["LB"] == pytest.approx(70.0)
    assert by_id["grid"] == pytest.approx(-20.0)


def test_account_horizon_aggregates_timeseries(capsys, tmp_path):
    out = tmp_path / "acc"
    code, stdout, _ = run(capsys, "account", "--grid", fx("fig5_three_node.json"),
                          "--timeseries", fx("fig5_day.csv"),
                          "--out", str(out), "--no-figures")
    assert code == 0
    summary = out_json(stdout)
    assert summary["timesteps"] == [0, 1, 2, 3, 4, 5]
    assert summary["scope1_total_ton"] == pytest.approx(750.0, abs=1e-6)


def test_account_snapshot_selects_one_row(capsys, tmp_path):
    out = tmp_path / "acc"
    code, stdout, _ = run(capsys, "account", "--grid", fx("fig5_three_node.json"),
                          "--timeseries", fx("fig5_day.csv"), "--snapshot", "5",
                          "--out", str(out), "--no-figures")
    assert code == 0
    summary = out_json(stdout)
    assert summary["timesteps"] == [5]
    assert summary["scope1_total_ton"] == pytest.approx(100.0, abs=1e-6)


def test_missing_snapshot_row_is_an_error(capsys):
    code, _, err = run(capsys, "account", "--grid", fx("fig5_three_node.json"),
                       "--timeseries", fx("fig5_day.csv"), "--snapshot", "99",
                       "--no-figures")
    assert code == 1
    assert out_json(err)["error"] == "ParseError"


def test_config_file_supplies_contracts_and_figure_switch(capsys, tmp_path):
    cfg = tmp_path / "run.json"
    out = tmp_path / "acc"
    cfg.write_text(json.dumps({
        "grid": fx("fig4_grid2.json"),
        "contracts": [["L1", "G2", 30.0]],
        "figures": False}))
    code, stdout, _ = run(capsys, "account", "--config", str(cfg),
                          "--out", str(out))
    assert code == 0
    assert out_json(stdout)["method"] == "flow-based:contract-priority"
    assert not list(out.glob("*.png"))
    manifest = out_json((out / "run_manifest.json").read_text())
    assert manifest["config"]["contracts"] == [["L1", "G2", 30.0]]
    assert "config" in manifest["inputs"]


# ------------------------------------------------------------- aef/cef/mef


def test_aef_prints_factor(capsys):
    code, stdout, _ = run(capsys, "aef", "--grid", fx("fig2_counterexample.json"))
    assert code == 0
    assert out_json(stdout)["aef_ton_per_mwh"] == pytest.approx(0.5)


def test_cef_negative_under_congestion(capsys, tmp_path):
    out = tmp_path / "cef"
    code, stdout, _ = run(capsys, "cef", "--grid", fx("fig5_three_node.json"),
                          "--target", "L2", "--delta", "50", "--out", str(out))
    assert code == 0
    payload = out_json(stdout)
    assert payload["cef_ton_per_mwh"] == pytest.approx(-1.0, abs=1e-9)
    assert payload["baseline_emissions_ton_per_h"] == pytest.approx(150.0, abs=1e-9)
    assert payload["perturbed_emissions_ton_per_h"] == pytest.approx(100.0, abs=1e-9)
    on_disk = out_json((out / "cef.json").read_text())
    assert on_disk == {k: v for k, v in payload.items() if k != "out"}


def test_mef_at_boundary_uses_forward_difference(capsys):
    code, stdout, _ = run(capsys, "mef", "--grid", fx("fig5_three_node.json"),
                          "--target", "L2")
    assert code == 0
    payload = out_json(stdout)
    assert payload["mef_ton_per_mwh"] == pytest.approx(-1.0, abs=1e-6)
    assert payload["at_breakpoint"] is False


def test_unknown_target_reports_domain_error(capsys):
    code, _, err = run(capsys, "cef", "--grid", fx("fig5_three_node.json"),
                       "--target", "bogus", "--delta", "10")
    assert code == 1
    payload = out_json(err)
    assert payload["error"] == "UnknownId"
    assert "bogus" in payload["message"]


# ---------------------------------------------------------------- copf


def test_copf_writes_prices_without_carbon_column(capsys, tmp_path):
    out = tmp_path / "copf"
    code, stdout, _ = run(capsys, "copf", "--grid", fx("fig5_three_node.json"),
                          "--out", str(out), "--no-figures")
    assert code == 0
    rows = csv_rows(out / "prices.csv")
    assert list(rows[0]) == ["bus", "price_per_mwh", "energy_component",
                             "congestion_component"]
    lmp = {r["bus"]: float(r["price_per_mwh"]) for r in rows}
    assert lmp == {"b1": pytest.approx(0.0), "b2": pytest.approx(-50.0),
                   "b3": pytest.approx(50.0)}
    assert out_json(stdout)["binding_lines"] == ["l23"]


def test_copf_carbon_price_adds_comparison_column_and_figure(capsys, tmp_path):
    out = tmp_path / "copf"
    code, _, _ = run(capsys, "copf", "--grid", fx("fig5_three_node.json"),
                     "--carbon-price", "60", "--out", str(out))
    assert code == 0
    rows = {r["bus"]: r for r in csv_rows(out / "prices.csv")}
    assert "cost_only_price_per_mwh" in rows["b3"]
    assert float(rows["b3"]["price_per_mwh"]) == pytest.approx(110.0)
    assert float(rows["b3"]["cost_only_price_per_mwh"]) == pytest.approx(50.0)
    assert (out / "prices.png").read_bytes()[:8] == PNG_MAGIC
    assert (out / "flows.png").is_file()


def test_copf_emission_cap_dual_in_summary(capsys, tmp_path):
    grid = {
        "schema": "carbonflow-grid/1", "slack_bus": "hub",
        "buses": [{"id": "hub"}],
        "generators": [
            {"id": "wind", "bus": "hub", "gef": 0.0, "p_max": 50.0,
             "marginal_cost": 5.0},
            {"id": "coal", "bus": "hub", "gef": 1.0, "p_max": 100.0,
             "marginal_cost": 1.0}],
        "loads": [{"id": "town", "bus": "hub", "demand_mw": 80.0}],
    }
    path = tmp_path / "pair.json"
    path.write_text(json.dumps(grid))
    code, stdout, _ = run(capsys, "copf", "--grid", str(path),
                          "--emission-cap", "30", "--out",
                          str(tmp_path / "o"), "--no-figures")
    assert code == 0
    summary = out_json(stdout)
    assert summary["total_emissions_ton_per_h"] == pytest.approx(30.0, abs=1e-9)
    assert summary["emission_cap_dual"] == pytest.approx(4.0, abs=1e-9)


def test_copf_intensity_cap_feasible_and_infeasible(capsys, tmp_path):
    code, stdout, _ = run(capsys, "copf", "--grid", fx("fig2_counterexample.json"),
                          "--intensity-cap", "b:0.8",
                          "--out", str(tmp_path / "ok"), "--no-figures")
    assert code == 0
    assert out_json(stdout)["iterations"] >= 1
    code, _, err = run(capsys, "copf", "--grid", fx("fig2_counterexample.json"),
                       "--intensity-cap", "b:0.5",
                       "--out", str(tmp_path / "bad"), "--no-figures")
    assert code == 1
    assert out_json(err)["error"] == "Infeasible"


# ---------------------------------------------------------------- storage


def test_storage_sim_shift_scenario(capsys, tmp_path):
    out = tmp_path / "sim"
    code, stdout, _ = run(capsys, "storage-sim", "--grid", fx("storage_shift.json"),
                          "--timeseries", fx("storage_shift.csv"),
                          "--out", str(out))
    assert code == 0
    summary = out_json(stdout)
    assert summary["scope1_total_ton"] == pytest.approx(10.0, abs=1e-9)
    assert summary["final_states"]["S1"] == {"energy_mwh": 0.0, "carbon_ton": 0.0}
    rows = csv_rows(out / "storage_states.csv")
    assert [r["energy_mwh"] for r in rows] == ["0", "10", "0"]
    assert (out / "storage.png").read_bytes()[:8] == PNG_MAGIC
    assert (out / "report.png").is_file()


def test_storage_sim_requires_timeseries(capsys):
    code, _, err = run(capsys, "storage-sim", "--grid", fx("storage_shift.json"))
    assert code == 1
    assert out_json(err)["error"] == "ParseError"


# ------------------------------------------------------------- deliverability


def test_deliverability_verdict(capsys, tmp_path):
    out = tmp_path / "del"
    code, stdout, _ = run(capsys, "deliverability", "--grid", fx("fig4_grid1.json"),
                          "--source", "G2", "--sink", "L1", "--mw", "10",
                          "--out", str(out))
    assert code == 0
    payload = out_json(stdout)
    assert payload["deliverable"] is False
    assert payload["max_deliverable_mw"] == pytest.approx(0.0)
    assert (out / "deliverability.json").is_file()


# ------------------------------------------------------------------ usage


def test_unknown_command_exits_2(capsys):
    assert run(capsys, "frobnicate")[0] == 2


def test_missing_required_argument_exits_2(capsys):
    assert run(capsys, "cef", "--grid", fx("fig5_three_node.json"))[0] == 2


def test_no_grid_anywhere_is_a_domain_error(capsys):
    code, _, err = run(capsys, "pf", "--no-figures")
    assert code == 1
    assert out_json(err)["error"] == "ParseError"
