import numpy as np
import pytest

from carbonflow.copf import (CopfProblem, extract_prices,
                             flow_solution_from_dispatch,
                             solve_copf_cost_adder,
                             solve_copf_intensity_capped)
from carbonflow.errors import Infeasible, NotConverged
from carbonflow.lp import ScipyLinprogSolver
from carbonflow.model import Bus, Generator, Line, Load, Network, Snapshot
from carbonflow.tracing import solve_carbon_flow


def congested_triangle():
    return Network(
        buses=(Bus("b1"), Bus("b2"), Bus("b3")),
        lines=(Line("l12", "b1", "b2", 0.1), Line("l13", "b1", "b3", 0.1),
               Line("l23", "b2", "b3", 0.1, capacity_mw=50.0)),
        generators=(Generator("G1", "b1", gef=0.0, p_max=1e4, marginal_cost=0.0),
                    Generator("G3", "b3", gef=1.0, p_max=1e4, marginal_cost=50.0)),
        loads=(Load("L2", "b2", 0.0), Load("L3", "b3", 300.0)),
        slack_bus="b1")


def wind_coal_pair(coal_cost=1.0, wind_cost=5.0):
    return Network(
        buses=(Bus("w"), Bus("c")),
        lines=(Line("wc", "w", "c", 0.1),),
        generators=(Generator("wind", "w", gef=0.0, p_max=100.0,
                              marginal_cost=wind_cost),
                    Generator("coal", "c", gef=1.0, p_max=100.0,
                              marginal_cost=coal_cost)),
        loads=(Load("town", "c", 80.0),),
        slack_bus="w")


def test_congestion_splits_prices():
    problem = CopfProblem(congested_triangle(),
                          Snapshot(load_mw={"L2": 0.0, "L3": 300.0}))
    result = solve_copf_cost_adder(problem)
    assert result.setpoints["G1"] == pytest.approx(150.0, abs=1e-6)
    assert result.setpoints["G3"] == pytest.approx(150.0, abs=1e-6)
    assert result.binding_lines == ("l23",)
    assert result.lmp["b1"] == pytest.approx(0.0, abs=1e-6)
    assert result.lmp["b2"] == pytest.approx(-50.0, abs=1e-6)
    assert result.lmp["b3"] == pytest.approx(50.0, abs=1e-6)
    assert result.objective == pytest.approx(result.dual_objective, rel=1e-7)


def test_price_decomposition_identity():
    problem = CopfProblem(congested_triangle(),
                          Snapshot(load_mw={"L2": 20.0, "L3": 300.0}),
                          carbon_price=25.0)
    result = solve_copf_cost_adder(problem)
    prices = extract_prices(result, problem)
    for bus in result.lmp:
        assert result.lmp[bus] == pytest.approx(
            prices.energy_component + prices.congestion_component[bus], abs=1e-6)


def test_revenue_adequacy_under_congestion():
    net = congested_triangle()
    snap = Snapshot(load_mw={"L2": 0.0, "L3": 300.0})
    problem = CopfProblem(net, snap)
    result = solve_copf_cost_adder(problem)
    load_payment = sum(result.lmp[net.loads_by_id[l].bus] * mw
                       for l, mw in snap.load_mw.items())
    gen_revenue = sum(result.lmp[net.generators_by_id[g].bus] * mw
                      for g, mw in result.setpoints.items())
    rent = sum(result.congestion_duals.get(lid, 0.0) * result.line_flows[lid]
               for lid in result.line_flows)
    assert load_payment - gen_revenue == pytest.approx(rent, rel=1e-6)
    assert rent == pytest.approx(150.0 * 50.0, rel=1e-6)


def test_carbon_price_internalizes_emissions_into_prices():
    problem = CopfProblem(congested_triangle(),
                          Snapshot(load_mw={"L2": 0.0, "L3": 300.0}),
                          carbon_price=60.0)
    result = solve_copf_cost_adder(problem)
    # same corner, but the marginal unit now bids cost + price * gef
    assert result.lmp["b3"] == pytest.approx(50.0 + 60.0 * 1.0, abs=1e-6)
    assert result.total_cost == pytest.approx(7500.0, rel=1e-9)
    assert result.objective == pytest.approx(
        result.total_cost + 60.0 * result.total_emissions, rel=1e-9)


def test_carbon_price_shifts_the_merit_order():
    # coal undercuts wind on cost; pricing carbon flips the order
    net = wind_coal_pair(coal_cost=1.0, wind_cost=5.0)
    snap = Snapshot(load_mw={"town": 80.0})
    cheap = solve_copf_cost_adder(CopfProblem(net, snap))
    assert cheap.setpoints["coal"] == pytest.approx(80.0, abs=1e-6)
    priced = solve_copf_cost_adder(CopfProblem(net, snap, carbon_price=10.0))
    assert priced.setpoints["wind"] == pytest.approx(80.0, abs=1e-6)
    assert priced.total_emissions < cheap.total_emissions


@pytest.mark.parametrize("n_prices", [20])
def test_emissions_never_rise_with_the_carbon_price(n_prices):
    rng = np.random.default_rng(42)
    for _ in range(10):
        gens = tuple(
            Generator(f"g{k}", "hub", gef=float(rng.uniform(0.0, 1.2)),
                      p_max=float(rng.uniform(20.0, 60.0)),
                      marginal_cost=float(rng.uniform(1.0, 60.0)))
            for k in range(3))
        net = Network(buses=(Bus("hub"),), lines=(), generators=gens,
                      loads=(Load("town", "hub", 70.0),), slack_bus="hub")
        snap = Snapshot(load_mw={"town": min(70.0, sum(g.p_max for g in gens) * 0.9)})
        last = None
        for price in np.linspace(0.0, 200.0, n_prices):
            result = solve_copf_cost_adder(CopfProblem(net, snap,
                                                       carbon_price=float(price)))
            assert result.objective == pytest.approx(result.dual_objective,
                                                     rel=1e-7, abs=1e-7)
            if last is not None:
                assert result.total_emissions <= last + 1e-7
            last = result.total_emissions


def test_generator_minimums_are_respected():
    net = Network(
        buses=(Bus("hub"),), lines=(),
        generators=(Generator("must", "hub", gef=1.0, p_min=20.0, p_max=50.0,
                              marginal_cost=40.0),
                    Generator("cheap", "hub", gef=0.0, p_max=100.0,
                              marginal_cost=1.0)),
        loads=(Load("town", "hub", 60.0),),
        slack_bus="hub")
    result = solve_copf_cost_adder(CopfProblem(net, Snapshot(load_mw={"town": 60.0})))
    assert result.setpoints["must"] == pytest.approx(20.0, abs=1e-9)
    assert result.setpoints["cheap"] == pytest.approx(40.0, abs=1e-9)


def test_infeasible_demand_raises():
    net = wind_coal_pair()
    with pytest.raises(Infeasible):
        solve_copf_cost_adder(CopfProblem(net, Snapshot(load_mw={"town": 500.0})))


def test_emission_cap_binds_with_positive_dual():
    net = wind_coal_pair(coal_cost=1.0, wind_cost=5.0)
    snap = Snapshot(load_mw={"town": 80.0})
    uncapped = solve_copf_cost_adder(CopfProblem(net, snap))
    assert uncapped.total_emissions == pytest.approx(80.0, abs=1e-6)
    capped = solve_copf_cost_adder(CopfProblem(net, snap, total_emission_cap=30.0))
    assert capped.total_emissions == pytest.approx(30.0, abs=1e-6)
    assert capped.emission_cap_dual is not None and capped.emission_cap_dual > 0.0
    assert capped.total_cost > uncapped.total_cost - 1e-9


def test_intensity_cap_forces_cleaner_inflow():
    net = wind_coal_pair(coal_cost=1.0, wind_cost=5.0)
    snap = Snapshot(load_mw={"town": 80.0})
    problem = CopfProblem(net, snap, nodal_intensity_caps={"c": 0.4})
    result = solve_copf_intensity_capped(problem)
    assert result.setpoints["coal"] == pytest.approx(32.0, abs=1e-5)
    assert result.setpoints["wind"] == pytest.approx(48.0, abs=1e-5)
    assert len(result.iterations) >= 1
    flow = flow_solution_from_dispatch(problem, result)
    carbon = solve_carbon_flow(net, flow)
    assert carbon.node_intensity["c"] <= 0.4 + 1e-6


def test_intensity_cap_out_of_budget_is_declared_infeasible():
    # the town cannot get below 50/70 dirty share, whatever the dispatch
    net = Network(
        buses=(Bus("a"), Bus("b")),
        lines=(Line("ab", "a", "b", 0.1),),
        generators=(Generator("W", "a", gef=0.0, p_max=50.0, marginal_cost=0.0),
                    Generator("C", "b", gef=1.0, p_max=100.0, marginal_cost=10.0)),
        loads=(Load("LA", "a", 30.0), Load("LB", "b", 70.0)),
        slack_bus="a")
    problem = CopfProblem(net, Snapshot(load_mw={"LA": 30.0, "LB": 70.0}),
                          nodal_intensity_caps={"b": 0.5})
    with pytest.raises(Infeasible):
        solve_copf_intensity_capped(problem)


def test_intensity_cap_iteration_budget_exhausts_loudly():
    net = wind_coal_pair(coal_cost=1.0, wind_cost=5.0)
    problem = CopfProblem(net, Snapshot(load_mw={"town": 80.0}),
                          nodal_intensity_caps={"c": 0.4})
    with pytest.raises(NotConverged) as exc:
        solve_copf_intensity_capped(problem, max_iterations=1)
    assert exc.value.best is not None
    assert len(exc.value.log) >= 1


def test_scipy_solver_backend_agrees():
    problem = CopfProblem(congested_triangle(),
                          Snapshot(load_mw={"L2": 10.0, "L3": 300.0}))
    ours = solve_copf_cost_adder(problem)
    ref = solve_copf_cost_adder(problem, solver=ScipyLinprogSolver())
    assert ours.objective == pytest.approx(ref.objective, rel=1e-9)
    for g in ours.setpoints:
        assert ours.setpoints[g] == pytest.approx(ref.setpoints[g], abs=1e-6)
    for b in ours.lmp:
        assert ours.lmp[b] == pytest.approx(ref.lmp[b], abs=1e-6)


def test_dispatch_flow_round_trip_traces():
    problem = CopfProblem(congested_triangle(),
                          Snapshot(load_mw={"L2": 50.0, "L3": 300.0}))
    result = solve_copf_cost_adder(problem)
    flow = flow_solution_from_dispatch(problem, result)
    carbon = solve_carbon_flow(problem.network, flow)
    assert carbon.total_generation_emissions() == pytest.approx(
        result.total_emissions, abs=1e-6)


def test_negative_carbon_price_is_rejected():
    with pytest.raises(ValueError):
        CopfProblem(congested_triangle(), Snapshot(load_mw={}), carbon_price=-1.0)
