import math

import numpy as np
import pytest

from pdfem.assembly import Discretization
from pdfem.geometry import Box, build_horizon_quadrature, build_uniform_mesh
from pdfem.potential import PotentialSpec
from pdfem.verification import (
    ManufacturedCase, MmsForcing, RateReport, SweepError, SweepSettings, apriori_bound, converge_sweep,
    error_Ek, exact_force, fit_rate, manufactured_rhs, profile_norm, run_case, sine_case,
    time_for_exponent, truncation_errors,
)

SPEC1 = PotentialSpec(1.0, 1.0, "linear_decay", 1)


def case_with(theta, dtheta, ddtheta, d=1, eps=0.2):
    base = sine_case(d, eps, PotentialSpec(1.0, 1.0, "linear_decay", d))
    return ManufacturedCase("custom", base.box, eps, base.spec, base.profile, theta, dtheta, ddtheta)


# --- rate fitting -------------------------------------------------------------

def test_synthetic_rate_is_two():
    slope, _, r2 = fit_rate([0.1, 0.05], [4e-3, 1e-3])
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert r2 == 1.0


def test_rate_report_validation():
    with pytest.raises(ValueError):
        RateReport([0.05, 0.1, 0.2], [1, 2, 3], 1.0, 0.0, 1.0)
    noisy = RateReport([0.4, 0.2, 0.1], [1.0, 0.1, 0.08], *fit_rate([0.4, 0.2, 0.1], [1.0, 0.1, 0.08]))
    assert noisy.pre_asymptotic
    clean = RateReport([0.4, 0.2, 0.1], [1.6, 0.4, 0.1], *fit_rate([0.4, 0.2, 0.1], [1.6, 0.4, 0.1]))
    assert not clean.pre_asymptotic and clean.rows()[0] == (0.4, 1.6)
    with pytest.raises(ValueError):
        fit_rate([0.1], [1.0])


# --- truncation terms -----------------------------------------------------------

def test_tau_vanishes_for_linear_in_time():
    case = case_with(lambda t: 2.0 + 3.0 * t, lambda t: 3.0, lambda t: 0.0)
    mesh = build_uniform_mesh(case.box, 1 / 16)
    for k in (0, 5, 17):
        tr = truncation_errors(case, mesh, 0.01, k)
        assert tr.tau_u == pytest.approx(0.0, abs=1e-12)
        assert tr.tau_v == 0.0 and tr.sigma is None


def test_tau_for_quadratic_in_time():
    case = case_with(lambda t: t * t, lambda t: 2 * t, lambda t: 2.0)
    mesh = build_uniform_mesh(case.box, 1 / 16)
    dt = 0.02
    g = profile_norm(case, mesh)
    for k in (0, 3, 10):
        assert truncation_errors(case, mesh, dt, k).tau_u == pytest.approx(dt * g, rel=1e-10)


@pytest.mark.parametrize("omega", [1.0, 10.0])
def test_tau_bounded_by_dt_sup_acceleration(omega):
    case = sine_case(1, 0.2, SPEC1, omega=omega)
    mesh = build_uniform_mesh(case.box, 1 / 16)
    g = profile_norm(case, mesh)
    for dt in (0.05, 0.01):
        for k in range(0, int(1.0 / dt)):
            assert truncation_errors(case, mesh, dt, k).tau_u <= dt * case.ddtheta_bound * g * (1 + 1e-12)


def test_sigma_shrinks_with_h():
    # in 1D the rate carries a log(eps/h) factor, so the ratio sits a bit under 4
    case = sine_case(1, 0.25, SPEC1)
    table = build_horizon_quadrature(0.25, 64, "linear_decay", 1)
    ev = build_uniform_mesh(case.box, 1 / 256)
    s = [truncation_errors(case, build_uniform_mesh(case.box, h), 0.01, 0, table, ev).sigma
         for h in (1 / 16, 1 / 32)]
    assert 3.0 < s[0] / s[1] < 4.6


# --- manufactured forcing ----------------------------------------------------------

def test_rhs_of_zero_solution():
    case = case_with(lambda t: 0.0, lambda t: 0.0, lambda t: 0.0)
    X = np.linspace(0, 1, 11)[:, None]
    assert np.all(manufactured_rhs(case, 0.4, X, 16) == 0)


def test_rhs_static_balance():
    case = case_with(lambda t: 1.0, lambda t: 0.0, lambda t: 0.0)
    X = np.linspace(0, 1, 21)[:, None]
    table = build_horizon_quadrature(case.epsilon, 32, "linear_decay", 1)
    force = exact_force(case.profile, X, table, case.box, case.spec)
    np.testing.assert_allclose(manufactured_rhs(case, 2.0, X, 32), -force, rtol=1e-14)


@pytest.mark.parametrize("d", [1, 2])
def test_rhs_is_finite(d):
    case = sine_case(d, 0.25, PotentialSpec(1.0, 1.0, "linear_decay", d))
    X = np.random.default_rng(1).uniform(0, 1, (40, d))
    X[0] = 0.0
    assert np.all(np.isfinite(manufactured_rhs(case, 0.0, X, 16)))


@pytest.mark.parametrize("linear", [False, True])
@pytest.mark.parametrize("d", [1, 2])
def test_moment_expansion_matches_direct(d, linear):
    case = sine_case(d, 0.25, PotentialSpec(1.0, 1.0, "linear_decay", d), amplitude=0.3, omega=3.0)
    X = np.random.default_rng(2).uniform(0, 1, (30, d))
    forcing = MmsForcing(case, 16, linear=linear)
    at = forcing.bind(X)
    for t in (0.0, 0.37, 1.1):
        direct = manufactured_rhs(case, t, X, 16, linear)
        np.testing.assert_allclose(at(t), direct, rtol=1e-11, atol=1e-12 * np.abs(direct).max())
        np.testing.assert_allclose(forcing(t, X), direct, rtol=1e-14)


def test_large_strain_falls_back_to_direct():
    case = sine_case(1, 0.25, SPEC1, amplitude=50.0)
    X = np.linspace(0.1, 0.9, 5)[:, None]
    forcing = MmsForcing(case, 8)
    assert forcing.moments(X) is None
    np.testing.assert_allclose(forcing.bind(X)(0.2), manufactured_rhs(case, 0.2, X, 8))


@pytest.mark.parametrize("d", [1, 2])
def test_oracle_forcing_converges_second_order_in_lattice(d):
    case = sine_case(d, 0.25, PotentialSpec(1.0, 1.0, "linear_decay", d))
    X = np.random.default_rng(3).uniform(0, 1, (30, d))
    b = [manufactured_rhs(case, 0.3, X, m) for m in (32, 64, 128)]
    gaps = [np.abs(b[0] - b[1]).max(), np.abs(b[1] - b[2]).max()]
    assert gaps[0] / gaps[1] > 3.0
    assert gaps[0] < 1e-3 * np.abs(b[2]).max()


@pytest.mark.xfail(strict=True, reason="lattice quadrature is second order; 4m vs 8m agree to ~3e-4, not 1e-8")
def test_oracle_forcing_agrees_to_1e8():
    case = sine_case(1, 0.25, SPEC1)
    X = np.linspace(0.05, 0.95, 19)[:, None]
    a, b = manufactured_rhs(case, 0.3, X, 32), manufactured_rhs(case, 0.3, X, 64)
    assert np.abs(a - b).max() < 1e-8 * np.abs(b).max()


# --- error measures ------------------------------------------------------------------

def test_error_zero():
    case = case_with(lambda t: 0.0, lambda t: 0.0, lambda t: 0.0)
    mesh = build_uniform_mesh(case.box, 0.1)
    z = np.zeros((mesh.n_nodes, 1))
    assert error_Ek(mesh, z, z, case, 0.0) == 0.0


def test_error_of_sampled_exact_is_interpolation_floor():
    case = sine_case(1, 0.2, SPEC1, omega=2.0)
    floors = []
    for h in (1 / 16, 1 / 32):
        mesh = build_uniform_mesh(case.box, h)
        U, V = case.u(0.3, mesh.nodes), case.v(0.3, mesh.nodes)
        floors.append(error_Ek(mesh, U, V, case, 0.3))
    assert floors[0] / floors[1] == pytest.approx(4.0, rel=0.03)


def test_error_of_hat_perturbation():
    case = case_with(lambda t: 0.0, lambda t: 0.0, lambda t: 0.0)
    h, delta = 0.1, 0.3
    mesh = build_uniform_mesh(case.box, h)
    U = np.zeros((mesh.n_nodes, 1))
    U[4] = delta
    assert error_Ek(mesh, U, 0 * U, case, 0.0) == pytest.approx(delta * math.sqrt(2 * h / 3), rel=1e-12)


# --- sweeps ----------------------------------------------------------------------------

def test_run_case_small():
    case = sine_case(1, 0.25, SPEC1)
    err, res = run_case(case, SweepSettings(T=0.01, dt=1e-3, h=1 / 16))
    assert res.status == "ok" and 0 < err < 1e-2


def test_sweep_validation():
    case = sine_case(1, 0.25, SPEC1)
    with pytest.raises(ValueError):
        converge_sweep(case, SweepSettings(T=0.01, dt=1e-3, h=1 / 16), "epsilon", [0.1, 0.2])


def test_sweep_reports_instability():
    # the linear model grows exponentially above the CFL limit (about 0.2 here)
    case = sine_case(1, 0.25, SPEC1)
    base = SweepSettings(T=50.0, dt=0.25, h=1 / 32, form="strong", model="linear")
    with pytest.raises(SweepError, match="dt=0.5"):
        converge_sweep(case, base, "dt", [0.5, 0.25])


def test_small_temporal_sweep_orders_errors():
    case = sine_case(1, 0.25, SPEC1, omega=10.0)
    rep = converge_sweep(case, SweepSettings(T=0.2, dt=0.01, h=1 / 32), "dt", [0.02, 0.01, 0.005])
    assert list(rep.resolutions) == [0.02, 0.01, 0.005]
    assert rep.errors[0] > rep.errors[1] > rep.errors[2]
    assert rep.parameter == "dt" and len(rep.details) == 3


# --- a-priori estimate -------------------------------------------------------------------

def test_time_from_exponent():
    assert time_for_exponent(8.0, 0.1) == pytest.approx(0.016, rel=1e-14)


def test_apriori_arithmetic():
    T = time_for_exponent(8.0, 0.1)
    b = apriori_bound(T, 0.1, 0.00142, 0.0, C_t=1.0, sup_u_H2=1.0)
    assert b.exponent == pytest.approx(8.0)
    assert b.growth * b.exponent == pytest.approx(23847.66, abs=0.01)
    assert abs(b.growth * b.exponent - 23850) / 23850 < 1e-3
    assert b.spatial_term == pytest.approx(0.0481, rel=1e-3)
    assert abs(b.spatial_term - 0.05) / 0.05 < 0.05
    assert b.temporal_term == 0.0 and b.total == b.spatial_term


def test_apriori_terms_and_guards():
    b = apriori_bound(0.01, 0.1, 0.01, 0.5, C_t=2.0, sup_u_H2=3.0, L1=1.0)
    F = 0.01 * 2 / 0.01
    assert b.temporal_term == pytest.approx(math.exp(F) * 2.0 * 0.01 * 0.5 / 0.25)
    assert b.spatial_term == pytest.approx(math.exp(F) * F * 1e-4 * 3.0 / 0.25)
    with pytest.raises(ValueError):
        apriori_bound(0.01, 0.1, 0.01, 1.0, 1.0, 1.0)
