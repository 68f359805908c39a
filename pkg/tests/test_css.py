"""Optimal cyclic steady state: orbit quality, caching, and invariants."""

from __future__ import annotations

import numpy as np
import pytest

from gasmpc.css import CssLibrary, CssSolution, demand_table, solve_css
from gasmpc.network import network_from_dict
from gasmpc.plant import PlantSimulator, state_cell_order, steady_initial_state

from conftest import DT_SECONDS, NETWORK_PATH, PERIOD_STEPS

# energy per cycle frozen from converged runs; tolerance covers solver noise
FROZEN_ENERGY_MWH = {"min": 3.461243, "nominal": 4.486129, "max": 5.684147}


# ---------------------------------------------------------------------------
# orbit quality


def test_css_converges(css_nominal):
    assert css_nominal.success
    assert css_nominal.period_steps == PERIOD_STEPS
    assert css_nominal.dt_seconds == DT_SECONDS
    assert css_nominal.demand_level == "nominal"


def test_css_energy_matches_frozen_values(css_all_levels):
    for level, expected in FROZEN_ENERGY_MWH.items():
        got = css_all_levels[level].objective_mwh
        assert got == pytest.approx(expected, abs=2e-5), level


def test_css_energy_ordering_follows_demand_level(css_all_levels):
    assert (css_all_levels["min"].objective_mwh
            < css_all_levels["nominal"].objective_mwh
            < css_all_levels["max"].objective_mwh)


def test_css_objective_equals_power_sum(css_nominal):
    # the reported MWh per cycle is exactly the step-hours-weighted power sum
    step_hours = css_nominal.dt_seconds / 3600.0
    total = sum(float(np.sum(arr)) * step_hours for arr in css_nominal.powers.values())
    assert css_nominal.objective_mwh == pytest.approx(total, abs=1e-8)


def test_css_mass_balance_over_one_cycle(net, css_nominal):
    # linepack returns to its starting value, so cycle supply == cycle offtake
    supplied = float(np.sum(css_nominal.slices[("source_flow", "src", -1)]))
    demands = demand_table(net, PERIOD_STEPS, "nominal")
    drawn = sum(float(np.sum(v)) for v in demands.values())
    assert supplied == pytest.approx(drawn, rel=1e-9)


def test_css_pressures_respect_node_limits(net, css_nominal):
    scaling_pressure = 1e5
    for node in net.nodes:
        arr = css_nominal.node_pressures[node.id]
        assert np.all(arr >= node.pressure_min / scaling_pressure - 1e-7), node.id
        assert np.all(arr <= node.pressure_max / scaling_pressure + 1e-7), node.id


def test_css_plant_replay_returns_to_start(net, css_nominal):
    # integrating the plant for one full cycle from the orbit state with the
    # orbit's power schedule must land back on the starting state
    order = state_cell_order(net)
    plant = PlantSimulator(net, dt_seconds=DT_SECONDS)
    demands = demand_table(net, PERIOD_STEPS, "nominal")
    x = css_nominal.state_vector(order, 0)
    for j in range(PERIOD_STEPS):
        powers = {cid: css_nominal.power_at(cid, j) for cid in css_nominal.powers}
        step_demands = {s: float(demands[s][j]) for s in net.sink_ids}
        x, report = plant.step(x, powers, step_demands, step_index=j)
        assert report.mode == "direct"
    err = np.max(np.abs(x - css_nominal.state_vector(order, 0)))
    assert err <= 1e-6


def test_css_replay_intermediate_states_follow_orbit(net, css_nominal):
    # every intermediate phase of the replay must sit on the stored orbit too
    order = state_cell_order(net)
    plant = PlantSimulator(net, dt_seconds=DT_SECONDS)
    demands = demand_table(net, PERIOD_STEPS, "nominal")
    x = css_nominal.state_vector(order, 0)
    worst = 0.0
    for j in range(PERIOD_STEPS):
        powers = {cid: css_nominal.power_at(cid, j) for cid in css_nominal.powers}
        step_demands = {s: float(demands[s][j]) for s in net.sink_ids}
        x, _ = plant.step(x, powers, step_demands, step_index=j)
        ref = css_nominal.state_vector(order, j + 1)
        worst = max(worst, float(np.max(np.abs(x - ref))))
    assert worst <= 1e-6


# ---------------------------------------------------------------------------
# demand tables


def test_demand_table_levels(net):
    nom = demand_table(net, PERIOD_STEPS, "nominal")
    low = demand_table(net, PERIOD_STEPS, "min")
    high = demand_table(net, PERIOD_STEPS, "max")
    assert set(nom) == set(net.sink_ids)
    for sink in net.sink_ids:
        assert nom[sink].shape == (PERIOD_STEPS,)
        assert np.all(low[sink] <= nom[sink])
        assert np.all(nom[sink] <= high[sink])


def test_demand_table_wraps_beyond_profile_period(net):
    doubled = demand_table(net, 2 * PERIOD_STEPS, "nominal")
    single = demand_table(net, PERIOD_STEPS, "nominal")
    for sink in net.sink_ids:
        np.testing.assert_array_equal(doubled[sink][:PERIOD_STEPS], single[sink])
        np.testing.assert_array_equal(doubled[sink][PERIOD_STEPS:], single[sink])


def test_demand_table_overrides_take_precedence(net):
    flat = np.full(PERIOD_STEPS, 1.25)
    table = demand_table(net, PERIOD_STEPS, "nominal", overrides={"s1": flat})
    np.testing.assert_array_equal(table["s1"], flat)
    nom = demand_table(net, PERIOD_STEPS, "nominal")
    np.testing.assert_array_equal(table["s2"], nom["s2"])


# ---------------------------------------------------------------------------
# solution object


def test_css_solution_round_trips_through_dict(css_nominal):
    again = CssSolution.from_dict(css_nominal.to_dict())
    assert again.objective_mwh == css_nominal.objective_mwh
    assert again.period_steps == css_nominal.period_steps
    for key, arr in css_nominal.densities.items():
        np.testing.assert_array_equal(again.densities[key], arr)
    for cid, arr in css_nominal.powers.items():
        np.testing.assert_array_equal(again.powers[cid], arr)
    for key, arr in css_nominal.slices.items():
        np.testing.assert_array_equal(again.slices[key], arr)


def test_css_phase_indexing_wraps(css_nominal):
    cid = next(iter(css_nominal.powers))
    assert css_nominal.power_at(cid, PERIOD_STEPS) == css_nominal.power_at(cid, 0)
    pid_cell = next(iter(css_nominal.densities))
    assert (css_nominal.density_at(*pid_cell, PERIOD_STEPS + 3)
            == css_nominal.density_at(*pid_cell, 3))


def test_css_slices_agree_with_density_arrays(css_nominal):
    # slice storage is phase-shifted: slice index j serves phase-j demand and
    # carries the post-step state, i.e. the density at phase j+1
    for (pid, cell), arr in css_nominal.densities.items():
        sl = css_nominal.slices[("density", pid, cell)]
        for j in range(PERIOD_STEPS):
            assert sl[j] == css_nominal.density_at(pid, cell, j + 1)


def test_state_vector_uses_given_order(net, css_nominal):
    order = state_cell_order(net)
    vec = css_nominal.state_vector(order, 5)
    assert vec.shape == (len(order),)
    for i, (pid, cell) in enumerate(order):
        assert vec[i] == css_nominal.density_at(pid, cell, 5)


def test_steady_initial_state_is_physical(net):
    x = steady_initial_state(net, PERIOD_STEPS, DT_SECONDS)
    assert x.shape == (len(state_cell_order(net)),)
    assert np.all(x > 0)
    assert np.all(np.isfinite(x))


# ---------------------------------------------------------------------------
# cache


def test_cache_round_trip(tmp_path, net, css_nominal):
    lib = CssLibrary(tmp_path / "cache")
    path = lib.store(net, css_nominal)
    assert path.exists()
    again = lib.load(net, PERIOD_STEPS, DT_SECONDS, "nominal")
    assert again is not None
    assert again.objective_mwh == css_nominal.objective_mwh
    np.testing.assert_array_equal(
        again.powers["c1"], css_nominal.powers["c1"])


def test_cache_misses_for_other_levels_and_geometry(tmp_path, net, css_nominal):
    lib = CssLibrary(tmp_path / "cache")
    lib.store(net, css_nominal)
    assert lib.load(net, PERIOD_STEPS, DT_SECONDS, "min") is None
    assert lib.load(net, PERIOD_STEPS / 2, DT_SECONDS, "nominal") is None
    assert lib.load(net, PERIOD_STEPS, DT_SECONDS / 2, "nominal") is None


def test_cache_misses_after_network_change(tmp_path, net, css_nominal):
    lib = CssLibrary(tmp_path / "cache")
    lib.store(net, css_nominal)
    import json
    cfg = json.loads(NETWORK_PATH.read_text())
    cfg["pipes"][0]["length_m"] += 500.0
    other = network_from_dict(cfg)
    assert lib.load(other, PERIOD_STEPS, DT_SECONDS, "nominal") is None


def test_cache_ignores_corrupt_entries(tmp_path, net, css_nominal):
    lib = CssLibrary(tmp_path / "cache")
    path = lib.store(net, css_nominal)
    path.write_text("{ not json")
    assert lib.load(net, PERIOD_STEPS, DT_SECONDS, "nominal") is None


def test_cache_leaves_no_temp_files(tmp_path, net, css_nominal):
    lib = CssLibrary(tmp_path / "cache")
    lib.store(net, css_nominal)
    leftovers = [p for p in (tmp_path / "cache").iterdir() if p.suffix != ".json"]
    assert leftovers == []


# ---------------------------------------------------------------------------
# custom demand cycles


def test_css_with_overrides_is_marked_custom(net):
    flat = {s: np.full(1, 1.4) for s in net.sink_ids}
    css = solve_css(net, 1, DT_SECONDS, demand_overrides=flat)
    assert css.success
    assert css.demand_level == "custom"
    assert css.period_steps == 1
