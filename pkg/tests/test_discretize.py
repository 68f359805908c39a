"""Finite-volume/backward-Euler transcription into sparse nonlinear systems."""

from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
import scipy.sparse as sp

from gasmpc.discretize import (
    Horizon,
    ParamIndex,
    Scaling,
    SystemBuilder,
    VariableIndex,
    add_network_horizon,
)
from gasmpc.nlp import check_derivatives

from conftest import DT_SECONDS


def _one_step_system(net, *, relax=False):
    b = SystemBuilder()
    scaling = Scaling.for_gas(net.gas)
    handles = add_network_horizon(b, net, scaling, Horizon(1, DT_SECONDS),
                                  relax_sink_pressure_floor=relax)
    return b.freeze(), handles, scaling


def _interior_point(system, rng):
    """A strictly feasible-with-respect-to-bounds random point near the start."""
    lo, hi = system.lower, system.upper
    x = system.start.copy()
    span = np.where(np.isfinite(lo) & np.isfinite(hi), hi - lo, 1.0)
    x = x + 0.05 * span * rng.uniform(-1.0, 1.0, size=x.size)
    margin = 0.05 * span
    x = np.clip(x, np.where(np.isfinite(lo), lo + margin, x),
                np.where(np.isfinite(hi), hi - margin, x))
    return x


# ---------------------------------------------------------------------------
# structure


def test_one_step_variable_and_row_counts(net):
    system, handles, _ = _one_step_system(net)
    kinds = Counter(v.kind for v in system.var_list)
    cells = sum(p.num_cells for p in net.pipes)
    assert kinds["density"] == cells == 15
    assert kinds["velocity"] == cells
    assert kinds["pressure"] == cells
    assert kinds["node_pressure"] == len(net.nodes) == 9
    assert kinds["flow_in"] == kinds["flow_out"] == len(net.pipes) == 5
    assert kinds["boost"] == kinds["comp_flow"] == kinds["power"] == 3
    assert kinds["source_flow"] == 1
    assert system.num_vars == 74
    # compressor powers are the only free decisions of a single step
    assert system.num_rows == system.num_vars - len(net.compressors) == 71
    assert system.ineq_rows.size == 0
    assert len(handles.step(1).power) == 3


def test_relaxed_build_lowers_sink_pressure_floors(net):
    hard, _, scaling = _one_step_system(net, relax=False)
    soft, _, _ = _one_step_system(net, relax=True)
    # same structure; only sink node-pressure lower bounds widen to the
    # network-wide floor so callers can penalize dips instead of forbidding them
    assert soft.num_vars == hard.num_vars
    assert soft.num_rows == hard.num_rows
    global_floor = min(n.pressure_min for n in net.nodes) / scaling.pressure
    sinks = set(net.sink_ids)
    lowered = 0
    for col, v in enumerate(soft.var_list):
        if v.kind == "node_pressure" and v.entity in sinks:
            assert soft.lower[col] == pytest.approx(global_floor)
            if soft.lower[col] < hard.lower[col]:
                lowered += 1
        else:
            assert soft.lower[col] == hard.lower[col]
    assert lowered == len(sinks)


def test_build_is_deterministic(net):
    a, _, _ = _one_step_system(net)
    b, _, _ = _one_step_system(net)
    assert a.var_list == b.var_list
    assert a.row_list == b.row_list
    assert np.array_equal(a.lower, b.lower)
    assert np.array_equal(a.upper, b.upper)
    assert np.array_equal(a.start, b.start)
    assert np.array_equal(a.params, b.params)
    x = a.start
    assert np.array_equal(a.residual(x), b.residual(x))
    assert np.array_equal(a.jacobian(x).toarray(), b.jacobian(x).toarray())


def test_horizon_chains_steps_through_density_columns(net):
    b = SystemBuilder()
    scaling = Scaling.for_gas(net.gas)
    handles = add_network_horizon(b, net, scaling, Horizon(3, DT_SECONDS))
    system = b.freeze()
    one, _, _ = _one_step_system(net)
    # each additional step adds one full step block of variables
    assert system.num_vars == 3 * one.num_vars
    assert system.num_rows == 3 * one.num_rows
    for t in (1, 2, 3):
        assert set(handles.step(t).density) == {(p.id, c) for p in net.pipes
                                                for c in range(p.num_cells)}


def test_horizon_validation():
    with pytest.raises(ValueError):
        Horizon(0, 3600.0)
    with pytest.raises(ValueError):
        Horizon(4, 0.0)
    assert Horizon(2, 1800.0).step_hours == 0.5


def test_scaling_makes_equation_of_state_identity(net):
    scaling = Scaling.for_gas(net.gas)
    # scaled pressure == scaled density by construction
    rho_phys = 30.0
    p_phys = net.gas.sound_speed_sq * rho_phys
    assert p_phys / scaling.pressure == pytest.approx(rho_phys / scaling.density, rel=1e-14)


# ---------------------------------------------------------------------------
# parameters


def test_demand_parameter_moves_exactly_one_balance_row(net):
    system, handles, scaling = _one_step_system(net)
    sink = net.sink_ids[0]
    x = system.start
    base = system.residual(x)
    slot = handles.demand_params[(sink, 1, 0)]
    system.params[slot] += 0.25
    bumped = system.residual(x)
    diff = bumped - base
    nz = np.flatnonzero(np.abs(diff) > 0)
    assert nz.size == 1
    assert system.row_list[nz[0]].kind == "node_balance"
    assert system.row_list[nz[0]].entity == sink
    assert diff[nz[0]] == pytest.approx(-0.25, rel=1e-14)


def test_initial_density_parameters_cover_all_cells(net):
    _, handles, _ = _one_step_system(net)
    assert set(handles.initial_density_params) == {(p.id, c) for p in net.pipes
                                                   for c in range(p.num_cells)}


def test_set_param_is_visible_through_live_nlp(net):
    system, handles, _ = _one_step_system(net)
    nlp = system.make_nlp("probe")
    x = system.start
    before = nlp.eq_residual(x).copy()
    system.set_param(ParamIndex("demand", net.sink_ids[1], -1, 1, 0), 9.99)
    after = nlp.eq_residual(x)
    assert not np.array_equal(before, after)


# ---------------------------------------------------------------------------
# derivatives


def test_one_step_derivatives_match_finite_differences(net):
    system, _, _ = _one_step_system(net, relax=True)
    nlp = system.make_nlp("fd-check")
    rng = np.random.default_rng(5)
    for _ in range(3):
        x = _interior_point(system, rng)
        rep = check_derivatives(nlp, x)
        assert rep.max_rel < 1e-6, rep


def test_jacobian_matches_directional_differences(net):
    system, _, _ = _one_step_system(net)
    rng = np.random.default_rng(9)
    x = _interior_point(system, rng)
    J = system.jacobian(x)
    h = 1e-7
    for _ in range(4):
        v = rng.standard_normal(system.num_vars)
        v /= np.linalg.norm(v)
        fd = (system.residual(x + h * v) - system.residual(x - h * v)) / (2 * h)
        an = J @ v
        assert np.max(np.abs(fd - an)) < 1e-6


def test_hessian_matches_differentiated_gradient(net):
    system, _, _ = _one_step_system(net)
    rng = np.random.default_rng(13)
    x = _interior_point(system, rng)
    y = rng.standard_normal(system.num_rows)

    def lag_grad(z):
        return system.objective_coeffs + system.jacobian(z).T @ y

    H = system.hessian(x, y).tocsr()
    assert (H - H.T).nnz == 0 or np.max(np.abs((H - H.T).toarray())) < 1e-12
    h = 1e-6
    for _ in range(3):
        v = rng.standard_normal(system.num_vars)
        v /= np.linalg.norm(v)
        fd = (lag_grad(x + h * v) - lag_grad(x - h * v)) / (2 * h)
        an = H @ v
        assert np.max(np.abs(fd - an)) < 1e-5


def test_friction_term_smooth_near_zero_velocity(net):
    # the |v|v regularization must stay differentiable through v = 0
    system, _, _ = _one_step_system(net)
    x = system.start.copy()
    for col, v in enumerate(system.var_list):
        if v.kind == "velocity":
            x[col] = 0.0
    r0 = system.residual(x)
    J0 = system.jacobian(x)
    assert np.all(np.isfinite(r0))
    assert np.all(np.isfinite(J0.data))


# ---------------------------------------------------------------------------
# NLP packaging


def test_make_nlp_contract(net):
    system, _, _ = _one_step_system(net, relax=True)
    nlp = system.make_nlp("contract")
    assert nlp.name == "contract"
    assert nlp.n == system.num_vars
    assert nlp.num_eq == system.eq_rows.size
    assert nlp.num_ineq == system.ineq_rows.size == 0
    assert nlp.ineq_residual is None
    assert np.all(nlp.lower < nlp.upper)  # strict: pins are equality rows instead
    assert np.all(nlp.x0 >= nlp.lower)
    assert np.all(nlp.x0 <= nlp.upper)
    x = nlp.x0
    np.testing.assert_array_equal(nlp.eq_residual(x), system.residual(x)[system.eq_rows])
    assert np.array_equal(nlp.gradient(x), system.objective_coeffs)
    assert nlp.objective(x) == pytest.approx(float(system.objective_coeffs @ x))


def test_builder_rejects_duplicate_identities(net):
    b = SystemBuilder()
    idx = VariableIndex("density", "p1", 0, 1, 0)
    b.new_var(idx, 0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        b.new_var(idx, 0.0, 1.0, 0.5)
