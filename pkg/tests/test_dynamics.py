import math

import numpy as np
import pytest

from pdfem.assembly import Discretization
from pdfem.dynamics import (
    InstabilityError, Integrator, RunConfig, SimState, energy_stability_check, first_step,
    reversed_state, run, step_strong, step_weak,
)
from pdfem.geometry import Box, FeField, build_uniform_mesh
from pdfem.potential import PotentialSpec


def sine(amp=0.05):
    return lambda X: amp * np.sin(np.pi * X).prod(axis=1, keepdims=True) * np.ones((1, X.shape[1]))


def const_body(vec):
    vec = np.asarray(vec, float)
    return lambda t, X: np.tile(vec, (len(X), 1))


# --- configuration -------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(dt=1.0), dict(dt=0.0), dict(dt=0.3, T=1.0), dict(form="implicit"),
                                dict(model="elastic"), dict(mass_mode="diag"), dict(stride=0)])
def test_run_config_rejects(kw):
    args = dict(T=0.9, dt=0.1)
    args.update(kw)
    with pytest.raises(ValueError):
        RunConfig(**args)


def test_run_config_basics():
    cfg = RunConfig(T=1.0, dt=0.1, form="strong")
    assert cfg.n_steps == 10 and cfg.lumped and not cfg.linear


# --- trivial trajectories ------------------------------------------------------

@pytest.mark.parametrize("form", ["weak", "strong"])
def test_zero_trajectory(disc_1d, form):
    dt = 0.01
    res = run(disc_1d, RunConfig(T=10 * dt, dt=dt, form=form))
    assert len(res.snapshots) == 11
    assert all(np.all(s.u == 0) and np.all(s.v == 0) for s in res.snapshots)
    assert len(res.energy.step) == 11
    assert len(list(res.energy.rows())) == res.config.n_steps + 1


def test_snapshot_stride_includes_final(disc_1d):
    res = run(disc_1d, RunConfig(T=0.07, dt=0.01, stride=3, u0=sine()))
    assert [s.step for s in res.snapshots] == [0, 3, 6, 7]
    assert res.snapshots[2].time == pytest.approx(0.06)


# --- first step ------------------------------------------------------------------

@pytest.mark.parametrize("form", ["weak", "strong"])
def test_first_step_zero_data(disc_1d, form):
    integ = Integrator(disc_1d, RunConfig(T=0.1, dt=0.01, form=form))
    s1 = first_step(integ.initial_state(), integ)
    assert s1.k == 1 and np.all(s1.u_curr == 0)


def test_first_step_constant_velocity(disc_1d):
    dt = 0.01
    integ = Integrator(disc_1d, RunConfig(T=0.1, dt=dt, form="strong", v0=lambda X: np.full_like(X, 0.7)))
    s1 = first_step(integ.initial_state(), integ)
    I = disc_1d.interior
    np.testing.assert_allclose(s1.u_curr[I], dt * 0.7, rtol=1e-14)
    assert np.all(s1.u_curr[disc_1d.mesh.boundary_node] == 0)


def test_first_step_constant_force_density(disc_1d):
    dt, g = 0.01, 2.5
    integ = Integrator(disc_1d, RunConfig(T=0.1, dt=dt, form="strong", body=const_body([g])))
    s1 = first_step(integ.initial_state(), integ)
    np.testing.assert_allclose(s1.u_curr[disc_1d.interior], 0.5 * dt * dt * g, rtol=1e-14)


def test_weak_matches_strong_for_interior_piecewise_linear_body(disc_1d):
    mesh = disc_1d.mesh
    nodal_b = np.maximum(0.0, 0.2 - np.abs(mesh.nodes - 0.5)) * 10.0  # hat supported inside D
    b_field = FeField(mesh, nodal_b)
    body = lambda t, X: b_field(X)
    dt = 0.01
    weak = Integrator(disc_1d, RunConfig(T=0.1, dt=dt, form="weak", body=body))
    strong = Integrator(disc_1d, RunConfig(T=0.1, dt=dt, form="strong", body=body))
    zero = np.zeros((mesh.n_nodes, 1))
    acc_w, _ = weak.acceleration(zero, 0.0)
    acc_s, _ = strong.acceleration(zero, 0.0)
    np.testing.assert_allclose(acc_w, nodal_b, atol=1e-11 * nodal_b.max())
    np.testing.assert_allclose(acc_w, acc_s, atol=1e-11 * nodal_b.max())


# --- stepping --------------------------------------------------------------------

def test_step_requires_history(disc_1d):
    integ = Integrator(disc_1d, RunConfig(T=0.1, dt=0.01))
    with pytest.raises(ValueError):
        integ.step(integ.initial_state())


def test_step_form_guards(disc_1d):
    weak = Integrator(disc_1d, RunConfig(T=0.1, dt=0.01, form="weak"))
    strong = Integrator(disc_1d, RunConfig(T=0.1, dt=0.01, form="strong"))
    s = weak.first_step(weak.initial_state())
    with pytest.raises(ValueError):
        step_strong(s, weak)
    with pytest.raises(ValueError):
        step_weak(s, strong)


def test_single_dof_harmonic_recurrence():
    # one interior node at x = 0.5; the linear nodal force is -mu u there
    mesh = build_uniform_mesh(Box.unit(1), 0.5)
    disc = Discretization.build(mesh, PotentialSpec(1.0, 1.0, "constant", 1), 0.4, m=8)
    e = np.zeros((3, 1))
    e[1] = 1.0
    mu = -disc.nodal_force(e, linear=True)[1, 0]
    assert mu > 0
    dt = 0.5 * 2 / math.sqrt(mu)
    n = 200
    cfg = RunConfig(T=n * dt, dt=dt, form="strong", model="linear", u0=lambda X: np.ones_like(X))
    res = run(disc, cfg)
    omega = 2 / dt * math.asin(dt * math.sqrt(mu) / 2)
    k = np.array([s.step for s in res.snapshots])
    u = np.array([s.u[1, 0] for s in res.snapshots])
    np.testing.assert_allclose(u, np.cos(omega * k * dt), atol=1e-11)


@pytest.mark.parametrize("model", ["nonlinear", "linear"])
def test_time_reversal(disc_1d, model):
    dt, n = 0.01, 300
    integ = Integrator(disc_1d, RunConfig(T=n * dt, dt=dt, form="strong", model=model, u0=sine(0.3)))
    s0 = integ.initial_state()
    s = integ.first_step(s0)
    s1 = s
    for _ in range(n - 1):
        s = integ.step(s)
    back = reversed_state(s)
    for _ in range(n - 1):
        back = integ.step(back)
    # back.u_curr is u^0, back.u_prev is u^1
    scale = np.abs(s0.u_curr).max()
    assert np.abs(back.u_curr - s0.u_curr).max() < 1e-10 * scale
    assert np.abs(back.u_prev - s1.u_curr).max() < 1e-10 * scale


@pytest.mark.parametrize("form", ["weak", "strong"])
def test_deterministic_trajectories(disc_2d, form):
    cfg = RunConfig(T=0.2, dt=0.01, form=form, u0=sine(0.2), body=const_body([0.1, 0.0]))
    a, b = run(disc_2d, cfg), run(disc_2d, cfg)
    for sa, sb in zip(a.snapshots, b.snapshots):
        assert np.array_equal(sa.u, sb.u) and np.array_equal(sa.v, sb.v)
    assert np.array_equal(a.energy.total, b.energy.total)


@pytest.mark.parametrize("form", ["weak", "strong"])
def test_boundary_stays_zero(disc_2d, form):
    res = run(disc_2d, RunConfig(T=0.2, dt=0.01, form=form, u0=sine(0.2), v0=lambda X: np.ones_like(X),
                                 body=const_body([1.0, -1.0])))
    bnd = disc_2d.mesh.boundary_node
    assert all(np.max(np.abs(s.u[bnd]), initial=0.0) == 0.0 for s in res.snapshots)


def test_velocity_is_backward_difference(disc_1d):
    res = run(disc_1d, RunConfig(T=0.05, dt=0.01, u0=sine()))
    s = res.snapshots
    for a, b in zip(s[1:-1], s[2:]):
        np.testing.assert_allclose(b.v, (b.u - a.u) / 0.01, rtol=1e-12, atol=1e-15)


def test_strong_weak_consistency_under_refinement():
    gaps = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        mesh = build_uniform_mesh(Box.unit(1), h)
        disc = Discretization.build(mesh, PotentialSpec(), 0.25)
        cfg = dict(T=0.05, dt=1e-3, u0=sine(0.1), mass_mode="consistent")
        us = run(disc, RunConfig(form="strong", **cfg)).final.u_curr
        uw = run(disc, RunConfig(form="weak", **cfg)).final.u_curr
        gaps.append(disc.l2_norm(us - uw))
    rates = [math.log2(gaps[i] / gaps[i + 1]) for i in range(2)]
    assert min(rates) > 1.5  # second order up to the 1D logarithmic factor


def test_instability_raises_with_partial_result(disc_1d):
    cfg = RunConfig(T=50.0, dt=0.1, form="strong", model="linear", u0=sine())
    with pytest.raises(InstabilityError) as info:
        run(disc_1d, cfg)
    err = info.value
    assert err.step > 0 and err.result.status == "unstable"
    assert err.result.steps_done == err.step - 1


# --- energy stability monitor ----------------------------------------------------

def test_energy_check_zero_data(disc_1d):
    res = run(disc_1d, RunConfig(T=0.1, dt=0.01))
    chk = energy_stability_check(res.energy)
    assert chk.passed and chk.worst_margin == 0.0


def test_energy_check_unforced_small_dt(disc_1d):
    res = run(disc_1d, RunConfig(T=0.5, dt=0.002, u0=sine()))
    e = res.energy.total
    assert np.all(e <= e[0] * (1 + 1e-3))
    assert energy_stability_check(res.energy).passed


def test_energy_check_constant_body_under_refinement(disc_1d):
    margins = []
    for dt in (0.0063, 0.00315):
        T = 200 * 0.0063
        res = run(disc_1d, RunConfig(T=T, dt=dt, u0=sine(), body=const_body([0.5])))
        chk = energy_stability_check(res.energy)
        assert chk.passed
        margins.append(chk.worst_margin)
    assert all(m > 0 for m in margins)


def test_energy_check_detects_violation():
    from pdfem.dynamics import EnergyReport
    steps = np.arange(4)
    rep = EnergyReport(steps, 0.1 * steps, np.array([1.0, 1.0, 1.2, 1.0]), np.zeros(4), np.zeros(4))
    chk = energy_stability_check(rep)
    assert not chk.passed and chk.worst_step == 2
    assert energy_stability_check(rep, slack=100.0).passed
