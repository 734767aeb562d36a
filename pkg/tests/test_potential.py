import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from pdfem.potential import (
    C_D, J_KINDS, OMEGA, CalibrationError, PotentialSpec, calibrate, critical_strain, f_eval,
    inflection_point, lame_and_gc, moment_J1, moment_M, potential_constants, spec_from_material,
)

# Oracle values frozen from independent computations (series, bisection, quadrature).
F_AT_ONE = 0.6321205588285577          # 1 - e^-1 by alternating series
C1_UNIT = 0.8577638849607068           # sqrt(2) e^(-1/2)
THREE_PI = 9.42477796076938


def _bisect(fun, lo, hi, tol=1e-15):
    flo = fun(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _inflection_residual(spec):
    return lambda r: float(spec.df(r * r) + 2 * r * r * spec.d2f(r * r))


def test_f_vanishes_at_zero():
    assert f_eval(0.0, PotentialSpec()) == 0.0


def test_f_asymptote():
    spec = PotentialSpec(c=2.5, beta=3.0)
    assert abs(f_eval(50 / spec.beta, spec) - spec.c) < 1e-12


def test_f_at_one_matches_series():
    series = sum((-1) ** (n + 1) / math.factorial(n) for n in range(1, 30))
    assert series == pytest.approx(F_AT_ONE, abs=1e-15)
    assert f_eval(1.0, PotentialSpec(1.0, 1.0)) == pytest.approx(F_AT_ONE, rel=1e-14)


def test_negative_argument_rejected():
    spec = PotentialSpec()
    for fun in (spec.f, spec.df, spec.d2f):
        with pytest.raises(ValueError):
            fun(-1e-3)


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        PotentialSpec(c=0.0)
    with pytest.raises(ValueError):
        PotentialSpec(beta=-1.0)
    with pytest.raises(ValueError):
        PotentialSpec(j_kind="gaussian")
    with pytest.raises(ValueError):
        PotentialSpec(d=4)


def test_slope_at_origin():
    spec = PotentialSpec(c=1.7, beta=0.6)
    r = 1e-9
    assert spec.f(r) / r == pytest.approx(spec.f_prime_0, rel=1e-8)
    assert spec.f_prime_0 == pytest.approx(1.7 * 0.6)
    assert spec.f_inf == 1.7


@pytest.mark.parametrize("beta,expected", [(0.5, 1.0), (2.0, 0.5)])
def test_inflection_point_bisection_oracle(beta, expected):
    spec = PotentialSpec(1.0, beta)
    root = _bisect(_inflection_residual(spec), 1e-6, 10.0)
    assert root == pytest.approx(expected, rel=1e-12)
    assert inflection_point(spec) == pytest.approx(root, rel=1e-12)


@given(beta=st.floats(1e-2, 1e2), c=st.floats(1e-2, 1e2))
def test_inflection_residual_vanishes(beta, c):
    spec = PotentialSpec(c, beta)
    r = inflection_point(spec)
    scale = spec.f_prime_0
    assert abs(_inflection_residual(spec)(r)) <= 1e-12 * scale


def test_critical_strain_examples():
    assert critical_strain(1.0, 0.04) == pytest.approx(5.0)
    assert critical_strain(1.0, 1.0) == pytest.approx(1.0)
    assert critical_strain(1.0, 0.08) == pytest.approx(5.0 / math.sqrt(2))
    with pytest.raises(ValueError):
        critical_strain(1.0, 0.0)
    with pytest.raises(ValueError):
        critical_strain(1.0, -0.5)


def test_bond_force_peaks_at_critical_strain():
    spec = PotentialSpec(1.0, 0.5)  # r_bar = 1
    ell = 0.04
    S = np.linspace(0, 20, 200001)
    force = spec.df(ell * S ** 2) * S
    assert S[np.argmax(force)] == pytest.approx(critical_strain(inflection_point(spec), ell), abs=2e-4)


@given(ell=st.floats(1e-3, 1.0), beta=st.floats(0.1, 10.0))
@settings(max_examples=50)
def test_softening_profile(ell, beta):
    spec = PotentialSpec(1.0, beta)
    Sc = critical_strain(inflection_point(spec), ell)
    rising = np.linspace(0, Sc, 400, endpoint=False)
    falling = np.linspace(Sc, 20 * Sc, 400)[1:]
    g = lambda S: spec.df(ell * S ** 2) * S
    assert np.all(np.diff(g(rising)) > 0)
    assert np.all(np.diff(g(falling)) < 0)


def test_concavity_on_grid():
    spec = PotentialSpec(2.0, 1.5)
    r = np.linspace(0, 15, 5001)  # beyond this f saturates in double precision
    assert np.all(np.diff(spec.df(r)) < 0)
    assert np.all(np.diff(spec.f(r)) > 0)


@given(r=st.floats(0.05, 5.0), order=st.integers(0, 3), beta=st.floats(0.2, 3.0))
@settings(max_examples=80)
def test_F1_derivatives_match_finite_differences(r, order, beta):
    spec = PotentialSpec(1.3, beta)
    h = 1e-5
    fd = (spec.F1(r + h, order) - spec.F1(r - h, order)) / (2 * h)
    assert fd == pytest.approx(spec.F1(r, order + 1), rel=1e-5, abs=1e-6)


def test_F1_is_f_of_square():
    spec = PotentialSpec(0.7, 1.9)
    r = np.linspace(0, 4, 41)
    np.testing.assert_allclose(spec.F1(r), spec.f(r * r), rtol=1e-15)
    with pytest.raises(ValueError):
        spec.F1(1.0, 5)


@pytest.mark.parametrize("kind", J_KINDS)
@pytest.mark.parametrize("d", [1, 2, 3])
def test_moment_M_matches_quadrature(kind, d):
    J = PotentialSpec(j_kind=kind).J
    val, _ = integrate.quad(lambda r: float(J(r)) * r ** d, 0, 1)
    assert moment_M(kind, d) == pytest.approx(val, rel=1e-10)


@pytest.mark.parametrize("kind", J_KINDS)
@pytest.mark.parametrize("d", [2, 3])
def test_moment_J1_matches_quadrature(kind, d):
    J = PotentialSpec(j_kind=kind).J
    surface = {2: 2 * math.pi, 3: 4 * math.pi}[d]
    val, _ = integrate.quad(lambda r: float(J(r)) * r ** (d - 2), 0, 1)
    assert moment_J1(kind, d) == pytest.approx(surface * val / OMEGA[d], rel=1e-10)


@pytest.mark.parametrize("kind", J_KINDS)
def test_moment_J1_divergent_in_1d(kind):
    assert moment_J1(kind, 1) is None
    assert potential_constants(PotentialSpec(j_kind=kind, d=1), n_grid=10_000).L1 is None


def test_dimension_tables():
    assert C_D == {1: pytest.approx(2 / 3), 2: pytest.approx(1 / 4), 3: pytest.approx(1 / 5)}
    assert [OMEGA[n] for n in range(4)] == [1.0, 2.0, pytest.approx(math.pi), pytest.approx(4 * math.pi / 3)]


def test_calibrate_2d_linear_decay_example():
    M2, _ = integrate.quad(lambda r: (1 - r) * r ** 2, 0, 1)
    assert M2 == pytest.approx(1 / 12)
    fp0, _ = calibrate(1.0, 1.0, 2, "linear_decay")
    assert fp0 == pytest.approx(48.0, rel=1e-13)
    _, finf = calibrate(1.0, 1.0, 2, "linear_decay")
    assert finf == pytest.approx(math.pi / (4 * M2), rel=1e-12)
    assert finf == pytest.approx(THREE_PI, rel=1e-13)


@pytest.mark.parametrize("kind", J_KINDS)
@pytest.mark.parametrize("d", [1, 2, 3])
def test_calibration_round_trip(kind, d):
    lam, gc = 2.3, 0.37
    fp0, finf = calibrate(lam, gc, d, kind)
    lam2, gc2 = lame_and_gc(fp0, finf, d, kind)
    assert abs(lam2 - lam) <= 1e-12 * lam
    assert abs(gc2 - gc) <= 1e-12 * gc
    spec = spec_from_material(lam, gc, d, kind)
    assert spec.f_prime_0 == pytest.approx(fp0, rel=1e-14)
    assert spec.f_inf == pytest.approx(finf, rel=1e-14)


def test_calibration_errors():
    with pytest.raises(CalibrationError):
        calibrate(-1.0, 1.0, 2, "constant")
    with pytest.raises(CalibrationError):
        calibrate(1.0, 1.0, 4, "constant")


def _scan_sup(fun, n=2_000_001, r_max=50.0):
    r = np.linspace(0, r_max, n)
    return float(np.max(np.abs(fun(r))))


def test_potential_constants_unit_case():
    spec = PotentialSpec(1.0, 1.0, "linear_decay", 2)
    k = potential_constants(spec)
    assert k.C1 == pytest.approx(C1_UNIT, rel=1e-10)
    assert k.C2 == pytest.approx(2.0, rel=1e-12)
    assert k.C1 == pytest.approx(_scan_sup(lambda r: spec.F1(r, 1)), rel=1e-8)
    assert k.C3 == pytest.approx(_scan_sup(lambda r: spec.F1(r, 3)), rel=1e-8)
    assert k.C4 == pytest.approx(_scan_sup(lambda r: spec.F1(r, 4)), rel=1e-8)
    assert k.L1 == pytest.approx(4 * 2.0 * 1.0, rel=1e-12)  # J_bar_1 = 1 for d=2, J=1-r
    assert k.r_bar == pytest.approx(1 / math.sqrt(2))


def test_potential_constants_scale_with_c():
    a = potential_constants(PotentialSpec(1.0, 1.0, d=2))
    b = potential_constants(PotentialSpec(3.0, 1.0, d=2))
    for name in ("C1", "C2", "C3", "C4", "L1"):
        assert getattr(b, name) == pytest.approx(3 * getattr(a, name), rel=1e-10)


def test_potential_constants_grid_invariance():
    spec = PotentialSpec(1.0, 2.0, d=2)
    coarse = potential_constants(spec, n_grid=100_000)
    fine = potential_constants(spec, n_grid=1_000_000)
    for name in ("C1", "C2", "C3", "C4"):
        assert getattr(coarse, name) == pytest.approx(getattr(fine, name), rel=1e-6)
