"""Gas physics, network model, JSON ingestion, and structural validation."""

from __future__ import annotations

import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasmpc.network import (
    CompressorSpec,
    ConfigError,
    DemandProfile,
    GasProperties,
    NetworkModel,
    NodeKind,
    NodeSpec,
    PipeSpec,
    compressor_power,
    density_from_pressure,
    equation_of_state,
    load_network,
    network_from_dict,
    validate_network,
)

from conftest import NETWORK_PATH

GAS = GasProperties(
    temperature=293.15,
    molecular_weight=0.0167,
    compressibility=0.9,
    specific_heat=2340.0,
    heat_capacity_ratio=1.4,
)


# ---------------------------------------------------------------------------
# frozen-value oracles for the physical relations


def test_equation_of_state_frozen_value():
    # Hand-computed: p = Z * R * T / MW * rho = 0.9 * 8.314 * 293.15 / 0.0167 * 35
    assert equation_of_state(GAS, 35.0) == pytest.approx(4597206.386227545, rel=1e-14)


def test_sound_speed_sq_frozen_value():
    assert GAS.sound_speed_sq == pytest.approx(131348.75389221558, rel=1e-14)


def test_compressor_power_frozen_value():
    # Hand-computed: 50 * 2340 * 293.15 / 0.9 * (1.5**(1 - 1/1.4) - 1)
    got = compressor_power(GAS, mass_flow=50.0, beta=1.5, efficiency=0.9)
    assert got == pytest.approx(4680771.212443228, rel=1e-14)


def test_compressor_power_zero_at_unit_boost():
    assert compressor_power(GAS, 40.0, 1.0, 0.8) == 0.0
    assert compressor_power(GAS, 0.0, 1.7, 0.8) == 0.0


def test_density_pressure_round_trip():
    rho = np.array([20.0, 35.0, 55.0])
    back = density_from_pressure(GAS, equation_of_state(GAS, rho))
    np.testing.assert_allclose(back, rho, rtol=1e-14)


def test_physical_relations_reject_bad_inputs():
    with pytest.raises(ValueError):
        equation_of_state(GAS, -1.0)
    with pytest.raises(ValueError):
        equation_of_state(GAS, 0.0)
    with pytest.raises(ValueError):
        density_from_pressure(GAS, -5.0)
    with pytest.raises(ValueError):
        compressor_power(GAS, -1.0, 1.5, 0.9)
    with pytest.raises(ValueError):
        compressor_power(GAS, 10.0, 0.99, 0.9)
    with pytest.raises(ValueError):
        compressor_power(GAS, 10.0, 1.5, 0.0)
    with pytest.raises(ValueError):
        compressor_power(GAS, 10.0, 1.5, 1.2)


# ---------------------------------------------------------------------------
# property tests: shape and monotonicity invariants


@given(rho=st.floats(min_value=1e-3, max_value=1e3))
def test_eos_is_linear_in_density(rho):
    assert equation_of_state(GAS, rho) == pytest.approx(rho * GAS.sound_speed_sq, rel=1e-12)


@given(
    f=st.floats(min_value=0.0, max_value=500.0),
    beta_lo=st.floats(min_value=1.0, max_value=3.0),
    bump=st.floats(min_value=1e-6, max_value=1.0),
)
@settings(max_examples=60)
def test_power_monotone_in_boost(f, beta_lo, bump):
    lo = compressor_power(GAS, f, beta_lo, 0.9)
    hi = compressor_power(GAS, f, beta_lo + bump, 0.9)
    assert hi >= lo
    if f > 0:
        assert hi > lo


@given(
    beta=st.floats(min_value=1.0, max_value=3.0),
    f_lo=st.floats(min_value=0.0, max_value=500.0),
    bump=st.floats(min_value=1e-6, max_value=100.0),
)
@settings(max_examples=60)
def test_power_linear_in_flow(beta, f_lo, bump):
    lo = compressor_power(GAS, f_lo, beta, 0.9)
    hi = compressor_power(GAS, f_lo + bump, beta, 0.9)
    assert hi >= lo
    # linear in mass flow: P(f)/f constant
    if f_lo > 1e-9 and beta > 1.0 + 1e-9:
        per_unit_lo = lo / f_lo
        per_unit_hi = hi / (f_lo + bump)
        assert per_unit_lo == pytest.approx(per_unit_hi, rel=1e-9)


@given(eta=st.floats(min_value=0.05, max_value=1.0))
def test_power_inverse_in_efficiency(eta):
    base = compressor_power(GAS, 50.0, 1.5, 1.0)
    assert compressor_power(GAS, 50.0, 1.5, eta) == pytest.approx(base / eta, rel=1e-12)


# ---------------------------------------------------------------------------
# bundled network file


def test_bundled_network_loads_and_validates(net):
    rep = validate_network(net)
    assert rep.ok, str(rep)
    assert len(net.nodes) == 9
    assert len(net.pipes) == 5
    assert len(net.compressors) == 3
    assert sum(p.num_cells for p in net.pipes) == 15
    assert net.sink_ids == ["s1", "s2", "s3", "s4", "s5"]
    assert net.source_ids == ["src"]


def test_bundled_network_demand_profiles(net):
    for sink in net.sink_ids:
        prof = net.demands[sink]
        assert prof.period_steps == 24
        assert np.all(prof.envelope_min <= prof.values)
        assert np.all(prof.values <= prof.envelope_max)
        assert np.all(prof.envelope_min >= 0.0)
        # sinusoid with 10% envelope around the nominal curve
        np.testing.assert_allclose(prof.envelope_min, prof.values * 0.9, rtol=1e-12)
        np.testing.assert_allclose(prof.envelope_max, prof.values * 1.1, rtol=1e-12)


def test_content_hash_is_stable_and_input_sensitive():
    a = load_network(NETWORK_PATH)
    b = load_network(NETWORK_PATH)
    assert a.content_hash() == b.content_hash()
    assert len(a.content_hash()) == 64

    cfg = json.loads(NETWORK_PATH.read_text())
    cfg2 = copy.deepcopy(cfg)
    cfg2["pipes"][0]["length_m"] = cfg2["pipes"][0]["length_m"] + 1.0
    c = network_from_dict(cfg2)
    assert c.content_hash() != a.content_hash()


def test_pipe_geometry_helpers():
    p = PipeSpec(id="p", from_node="a", to_node="b",
                 length=30000.0, diameter=0.8, friction=0.01, num_cells=3)
    assert p.area == pytest.approx(math.pi * 0.16, rel=1e-14)
    assert p.cell_length == pytest.approx(10000.0)


# ---------------------------------------------------------------------------
# JSON ingestion errors


def test_missing_key_raises_config_error():
    cfg = json.loads(NETWORK_PATH.read_text())
    del cfg["gas"]["temperature_K"]
    with pytest.raises(ConfigError, match="temperature_K"):
        network_from_dict(cfg)


def test_unknown_demand_kind_raises():
    cfg = json.loads(NETWORK_PATH.read_text())
    cfg["demands"]["s1"] = {"kind": "mystery"}
    with pytest.raises(ConfigError, match="unknown demand kind"):
        network_from_dict(cfg)


def test_load_network_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_network("/nonexistent/net.json")


# ---------------------------------------------------------------------------
# structural validation catches broken models


def _tiny_valid() -> NetworkModel:
    nodes = [
        NodeSpec("a", NodeKind.SOURCE_FIXED_PRESSURE, 3.0e6, 8.0e6, fixed_pressure=6.0e6),
        NodeSpec("b", NodeKind.SINK, 3.0e6, 8.0e6),
    ]
    pipes = [PipeSpec("p", "a", "b", 10000.0, 0.6, 0.01, num_cells=2)]
    demands = {
        "b": DemandProfile(
            period_steps=2,
            values=np.array([1.0, 2.0]),
            envelope_min=np.array([0.5, 1.5]),
            envelope_max=np.array([1.5, 2.5]),
        )
    }
    return NetworkModel(gas=GAS, nodes=nodes, pipes=pipes, compressors=[], demands=demands)


def _codes(net: NetworkModel) -> set[str]:
    return {v.code for v in validate_network(net).violations}


def test_tiny_network_is_valid():
    assert validate_network(_tiny_valid()).ok


def test_validation_flags_duplicate_node():
    net = _tiny_valid()
    net2 = NetworkModel(net.gas, net.nodes + [net.nodes[1]], net.pipes, [], net.demands)
    assert "node.duplicate" in _codes(net2)


def test_validation_flags_unknown_pipe_endpoint():
    net = _tiny_valid()
    bad = PipeSpec("q", "a", "ghost", 1000.0, 0.6, 0.01)
    net2 = NetworkModel(net.gas, net.nodes, net.pipes + [bad], [], net.demands)
    assert "pipe.endpoint" in _codes(net2)


def test_validation_requires_pressure_reference():
    net = _tiny_valid()
    nodes = [
        NodeSpec("a", NodeKind.SOURCE_FIXED_FLOW, 3.0e6, 8.0e6, fixed_flow=2.0),
        net.nodes[1],
    ]
    net2 = NetworkModel(net.gas, nodes, net.pipes, [], net.demands)
    assert "network.no_pressure_reference" in _codes(net2)


def test_validation_flags_bad_compressor():
    net = _tiny_valid()
    comp = CompressorSpec("c", "a", "b", efficiency=1.5, beta_min=1.0, beta_max=0.5)
    net2 = NetworkModel(net.gas, net.nodes, net.pipes, [comp], net.demands)
    codes = _codes(net2)
    assert "compressor.efficiency" in codes
    assert "compressor.beta_bounds" in codes


def test_validation_flags_demand_problems():
    net = _tiny_valid()
    bad = DemandProfile(
        period_steps=2,
        values=np.array([1.0, 2.0]),
        envelope_min=np.array([1.5, 1.5]),  # min above nominal
        envelope_max=np.array([1.5, 2.5]),
    )
    net2 = NetworkModel(net.gas, net.nodes, net.pipes, [], {"b": bad})
    assert "demand.envelope_order" in _codes(net2)

    net3 = NetworkModel(net.gas, net.nodes, net.pipes, [], {})
    assert "demand.missing" in _codes(net3)


def test_validation_flags_disconnected_node():
    net = _tiny_valid()
    extra = NodeSpec("island", NodeKind.SINK, 3.0e6, 8.0e6)
    isl_demand = DemandProfile(1, np.array([0.1]), np.array([0.1]), np.array([0.1]))
    demands = dict(net.demands)
    demands["island"] = isl_demand
    net2 = NetworkModel(net.gas, net.nodes + [extra], net.pipes, [], demands)
    assert "network.disconnected" in _codes(net2)


def test_validation_never_raises_on_garbage_gas():
    gas = GasProperties(temperature=-5.0, molecular_weight=0.0, compressibility=-1.0,
                        specific_heat=0.0, heat_capacity_ratio=1.0)
    net = NetworkModel(gas=gas, nodes=[], pipes=[], compressors=[], demands={})
    rep = validate_network(net)
    assert not rep.ok
    assert len(rep.violations) >= 5
