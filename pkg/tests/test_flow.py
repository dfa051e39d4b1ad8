"""Driver behavior: initialization identities, stepping, stopping, audits."""

import math

import numpy as np
import pytest

from sphereflow.flow import (
    EnergySystem,
    FlowConfig,
    HistoryWindow,
    bdf2_step,
    euler_init_step,
    harmonic_map_system,
    run_flow,
)
from sphereflow.fem import assemble_mass, assemble_stiffness, dirichlet_energy
from sphereflow.initial_data import InitSpec, make_initial
from sphereflow.mesh import build_square_mesh, free_nodes


def unit_square_setup(n, metric="h1", init="exact", seed=1, amplitude=0.5):
    mesh = build_square_mesh(n, lower_left=(-0.5, -0.5), side=1.0)
    u0 = make_initial(mesh, InitSpec(init, seed=seed, perturb_amplitude=amplitude))
    return mesh, u0, harmonic_map_system(mesh, metric=metric)


def constant_state_setup():
    """A feasible stationary state: constant field, no essential boundary."""
    mesh = build_square_mesh(3, dirichlet="none")
    u0 = np.tile([0.0, 0.0, 1.0], (mesh.n_vertices, 1))
    system = EnergySystem(mesh, assemble_stiffness(mesh), assemble_mass(mesh), metric="l2")
    return mesh, u0, system


def test_flow_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(method="rk4")
    with pytest.raises(ValueError):
        FlowConfig(metric="linf")
    with pytest.raises(ValueError):
        FlowConfig(tau=0.0)
    with pytest.raises(ValueError):
        FlowConfig(eps_stop=-1.0)


def test_h1_metric_requires_dirichlet_nodes():
    mesh = build_square_mesh(3, dirichlet="none")
    with pytest.raises(ValueError):
        EnergySystem(mesh, assemble_stiffness(mesh), assemble_mass(mesh), metric="h1")


def test_init_step_stationary_state():
    _, u0, system = constant_state_setup()
    u1, dt_u1 = euler_init_step(u0, system, FlowConfig(method="euler", metric="l2", tau=0.5))
    assert np.abs(dt_u1).max() == 0.0
    assert np.array_equal(u1, u0)


def test_init_step_orthogonality_and_energy_identity():
    mesh, u0, system = unit_square_setup(8, init="perturbed", amplitude=0.5)
    cfg = FlowConfig(method="bdf2", metric="h1", tau=0.25)
    u1, dt_u1 = euler_init_step(u0, system, cfg)
    f = free_nodes(mesh)
    assert np.abs(np.sum(dt_u1[f] * u0[f], axis=1)).max() <= 1e-10
    lhs = (
        dirichlet_energy(u1, system.stiffness)
        + cfg.tau * system.metric_norm_sq(dt_u1)
        + 0.5 * cfg.tau**2 * system.a_inner(dt_u1, dt_u1)
    )
    rhs = dirichlet_energy(u0, system.stiffness)
    assert abs(lhs - rhs) <= 1e-10 * (1.0 + rhs)
    # energy never increases across the initialization
    assert dirichlet_energy(u1, system.stiffness) <= rhs * (1.0 + 1e-12)


def test_init_step_nodal_identity_single_free_node():
    mesh, u0, system = unit_square_setup(2)
    cfg = FlowConfig(method="bdf2", metric="h1", tau=0.25)
    u1, dt_u1 = euler_init_step(u0, system, cfg)
    z = free_nodes(mesh)[0]
    lhs = np.sum(u1[z] ** 2) - 1.0
    rhs = cfg.tau**2 * np.sum(dt_u1[z] ** 2)
    assert abs(lhs - rhs) <= 1e-12


def test_init_bound_with_g_constant():
    # |grad pair|_G^2 <= (5/2) |grad u0|^2 follows from the energy identity
    from sphereflow.seqcalc import g_norm_sq

    _, u0, system = unit_square_setup(8, init="perturbed", amplitude=1.0)
    cfg = FlowConfig(method="bdf2", metric="l2", tau=0.5)
    u1, _ = euler_init_step(u0, system, cfg)
    g_sq = g_norm_sq(u1, u0, inner=system.a_inner)
    assert g_sq <= 2.5 * 2.0 * dirichlet_energy(u0, system.stiffness) * (1.0 + 1e-12)


def test_bdf2_fixed_point_ten_steps():
    _, u0, system = constant_state_setup()
    cfg = FlowConfig(method="bdf2", metric="l2", tau=0.25)
    hist = HistoryWindow(u_n=u0, u_prev=u0, u_prev2=None, dt_u1=np.zeros_like(u0), n=1)
    for n in range(2, 12):
        u_next, u_dot = bdf2_step(hist, system, cfg)
        assert np.abs(u_next - u0).max() <= 1e-12
        hist = HistoryWindow(u_n=u_next, u_prev=hist.u_n, u_prev2=hist.u_prev, dt_u1=hist.dt_u1, n=n)


def test_bdf2_step_orthogonality_and_nodal_recursion():
    mesh, u0, system = unit_square_setup(8, init="perturbed", amplitude=0.5)
    cfg = FlowConfig(method="bdf2", metric="h1", tau=0.125)
    u1, dt_u1 = euler_init_step(u0, system, cfg)
    hist = HistoryWindow(u_n=u1, u_prev=u0, u_prev2=None, dt_u1=dt_u1, n=1)
    u2, u_dot = bdf2_step(hist, system, cfg)
    f = free_nodes(mesh)
    u_hat = 2.0 * u1 - u0
    assert np.abs(np.sum(u_dot[f] * u_hat[f], axis=1)).max() <= 1e-10
    lhs = 1.5 * np.sum(u2[f] ** 2, axis=1) - 2.0 * np.sum(u1[f] ** 2, axis=1) + 0.5 * np.sum(
        u0[f] ** 2, axis=1
    )
    d2 = (u2 - 2.0 * u1 + u0) / cfg.tau**2
    rhs = 1.5 * cfg.tau**4 * np.sum(d2[f] ** 2, axis=1)
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_run_flow_stationary_stops_immediately():
    _, u0, system = constant_state_setup()
    euler = run_flow(u0, system, FlowConfig(method="euler", metric="l2", tau=0.5))
    assert euler.converged and euler.n_stop == 1
    assert euler.trace[-1].norm_dtu_l2 <= 1e-13
    bdf2 = run_flow(u0, system, FlowConfig(method="bdf2", metric="l2", tau=0.5))
    assert bdf2.converged and bdf2.n_stop == 2
    assert bdf2.trace[-1].norm_udot_star <= 1e-13


def test_run_flow_rejects_infeasible_start():
    _, u0, system = unit_square_setup(4)
    bad = u0.copy()
    bad[5] *= 1.5
    with pytest.raises(ValueError):
        run_flow(bad, system, FlowConfig(tau=0.25))


def test_run_flow_audit_residuals_both_metrics():
    for metric in ("h1", "l2"):
        _, u0, system = unit_square_setup(8, metric=metric, init="perturbed", amplitude=0.5)
        cfg = FlowConfig(method="bdf2", metric=metric, tau=0.125, t_max=50.0)
        report = run_flow(u0, system, cfg)
        assert report.res_init <= 1e-10
        assert report.res_energy_law <= 1e-8
        assert report.res_nodal_recursion <= 1e-8
        assert report.res_closed_form <= 1e-8
        assert report.mono_violation <= 1e-9
        assert report.n_stop == report.trace[-1].n
        assert report.a_sq > 0.0 and report.b_sq > 0.0


def test_run_flow_euler_audits_and_skips():
    _, u0, system = unit_square_setup(8, init="perturbed", amplitude=0.5)
    report = run_flow(u0, system, FlowConfig(method="euler", metric="h1", tau=0.125))
    assert math.isnan(report.res_energy_law)
    assert math.isnan(report.res_nodal_recursion)
    assert report.res_init <= 1e-10
    assert report.res_closed_form <= 1e-8
    assert report.mono_violation <= 1e-9


def test_run_flow_non_convergence_flags():
    _, u0, system = unit_square_setup(8, init="perturbed", amplitude=0.5)
    capped = run_flow(u0, system, FlowConfig(tau=0.125, t_max=0.5))
    assert not capped.converged
    assert capped.n_stop == 4
    overflow = run_flow(u0, system, FlowConfig(tau=0.125, max_steps=3))
    assert not overflow.converged
    assert overflow.n_stop == 3


def test_run_flow_reference_energy_wiring():
    _, u0, system = unit_square_setup(4)
    report = run_flow(u0, system, FlowConfig(tau=0.25), reference_energy=3.009)
    assert report.delta_ener == pytest.approx(abs(report.energy_final - 3.009), rel=1e-12)
    bare = run_flow(u0, system, FlowConfig(tau=0.25))
    assert math.isnan(bare.delta_ener)


def test_constraint_violation_linear_in_tau_unconditionally():
    # delta_uni <= C tau with C stable under halving
    _, u0, system = unit_square_setup(16, init="perturbed", amplitude=0.5)
    ratios = []
    for tau in (0.25, 0.125, 0.0625):
        report = run_flow(u0, system, FlowConfig(method="bdf2", metric="h1", tau=tau))
        ratios.append(report.delta_uni / tau)
    assert max(ratios) <= 2.0 * ratios[0] + 1e-12


def test_rate_window_bdf2_vs_euler():
    # halving tau on the 16x16 benchmark lands in the second/first order windows
    _, u0, system = unit_square_setup(16, init="perturbed", amplitude=0.5)
    deltas = {}
    for method in ("bdf2", "euler"):
        deltas[method] = [
            run_flow(u0, system, FlowConfig(method=method, metric="h1", tau=tau)).delta_uni
            for tau in (0.125, 0.0625)
        ]
    eoc_bdf2 = math.log2(deltas["bdf2"][0] / deltas["bdf2"][1])
    eoc_euler = math.log2(deltas["euler"][0] / deltas["euler"][1])
    assert 1.6 <= eoc_bdf2 <= 2.2
    assert 0.85 <= eoc_euler <= 1.15


def test_generalized_driver_with_load_and_custom_constraints():
    # with a load vector and no constraint rows the flow is plain gradient
    # descent for (1/2) a(u,u) - b(u); it must reach the direct solution
    mesh = build_square_mesh(4, lower_left=(-0.5, -0.5), side=1.0)
    stiffness = assemble_stiffness(mesh)
    mass = assemble_mass(mesh)
    f_field = np.tile([1.0, -0.5, 0.0], (mesh.n_vertices, 1))
    load = mass @ f_field
    system = EnergySystem(
        mesh,
        stiffness,
        mass,
        metric="h1",
        load=load,
        constraint_builder=lambda u_hat, free: None,
    )
    u0 = np.zeros((mesh.n_vertices, 3))
    report = run_flow(u0, system, FlowConfig(method="bdf2", metric="h1", tau=0.5, eps_stop=1e-10))
    assert report.converged

    f = free_nodes(mesh)
    k_ff = stiffness[f][:, f].toarray()
    direct = np.linalg.solve(k_ff, load[f])
    expected = np.zeros_like(u0)
    expected[f] = direct
    assert report.u_final is not None
    assert np.abs(report.u_final - expected).max() <= 1e-8
    assert report.trace[-1].energy == pytest.approx(system.energy(expected), rel=1e-10)


def test_u_final_matches_reported_constraint_violation():
    from sphereflow.diagnostics import constraint_violation

    mesh, u0, system = unit_square_setup(6, init="perturbed", amplitude=0.5)
    report = run_flow(u0, system, FlowConfig(method="bdf2", metric="h1", tau=0.25))
    assert constraint_violation(report.u_final, mesh) == pytest.approx(report.delta_uni, rel=1e-12)


def test_h1_stopping_time_roughly_tau_independent():
    _, u0, system = unit_square_setup(8, init="perturbed", amplitude=0.5)
    times = [
        run_flow(u0, system, FlowConfig(method="bdf2", metric="h1", tau=tau)).n_stop * tau
        for tau in (0.25, 0.125, 0.0625)
    ]
    assert max(times) <= 1.5 * min(times)
