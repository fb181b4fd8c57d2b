import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rotvortex import tfcore

# Harmonic-trap values from a 30-digit mpmath evaluation of the defining integrals.
LAMBDA_2 = 1.1283791670955126  # 2 / sqrt(pi)
R_2 = 1.0622519320271968
OMEGA1_2 = 1.7724538509055159  # sqrt(pi)
ETF_2 = 0.752252778063675


def test_harmonic_constants(harmonic):
    assert harmonic.lambda_tf == pytest.approx(LAMBDA_2, rel=1e-14)
    assert harmonic.r_tf == pytest.approx(R_2, rel=1e-14)
    assert tfcore.omega_c1(harmonic) == pytest.approx(OMEGA1_2, rel=1e-14)
    assert harmonic.etf_coeff == pytest.approx(ETF_2, rel=1e-13)


@pytest.mark.parametrize("bad", [dict(s=1.0), dict(s=float("nan")), dict(omega0=0.0), dict(omega0=-1)])
def test_params_rejected(bad):
    with pytest.raises(ValueError):
        tfcore.TrapParams(**bad)


@settings(max_examples=40, deadline=None)
@given(st.floats(2.0, 8.0))
def test_density_has_unit_mass(s):
    model = tfcore.tf_model(s)
    r = tfcore.radial_grid(model.r_tf, 20001)
    assert tfcore.trapezoid_radial(r, np.asarray(tfcore.rho_tf(model, r))) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(2.0, 8.0))
def test_tf_energy_coefficient_matches_direct_integral(s):
    model = tfcore.tf_model(s)
    r = tfcore.radial_grid(model.r_tf, 20001)
    rho = np.asarray(tfcore.rho_tf(model, r))
    direct = tfcore.trapezoid_radial(r, tfcore.rpow(r, s) * rho + rho**2)
    assert model.etf_coeff == pytest.approx(direct, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(2.0, 6.0), st.floats(0.1, 10.0), st.floats(0.0, 1.0))
def test_gain_closed_form_matches_quadrature(s, omega0, frac):
    model = tfcore.tf_model(s)
    r = frac * model.r_tf
    assert tfcore.f_tf(model, omega0, r) == pytest.approx(
        tfcore.f_tf_quadrature(model, omega0, r), rel=1e-10, abs=1e-13)


def test_cost_vanishes_at_centre_for_critical_speed():
    for s in (2.0, 3.0, 4.5):
        model = tfcore.tf_model(s)
        assert tfcore.h_tf(model, tfcore.omega_c1(model), 0.0) == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(2.0, 6.0), st.floats(0.5, 8.0), st.floats(0.05, 0.9))
def test_cost_derivatives_match_differences(s, omega0, frac):
    model = tfcore.tf_model(s)
    r = frac * model.r_tf
    d = 1e-5
    fd1 = (tfcore.h_tf(model, omega0, r + d) - tfcore.h_tf(model, omega0, r - d)) / (2 * d)
    fd2 = (tfcore.dh_tf(model, omega0, r + d) - tfcore.dh_tf(model, omega0, r - d)) / (2 * d)
    assert tfcore.dh_tf(model, omega0, r) == pytest.approx(fd1, rel=1e-6, abs=1e-8)
    assert tfcore.d2h_tf(model, omega0, r) == pytest.approx(fd2, rel=1e-6, abs=1e-8)


def test_edge_values_and_profile_shape(harmonic):
    prof = tfcore.cost_profile(harmonic, 2 * OMEGA1_2, 2048)
    assert prof.grid[0] == 0.0 and prof.grid[-1] == harmonic.r_tf
    assert prof.h_tf[-1] == 0.0 and prof.f_tf[-1] == 0.0 and prof.rho_tf[-1] == 0.0
    assert tfcore.h_tf(harmonic, 3.0, harmonic.r_tf) == pytest.approx(0.0, abs=1e-14)
    assert np.all(np.diff(prof.rho_tf) <= 0)
    assert prof.omega1 == pytest.approx(OMEGA1_2)


def test_density_outside_support_is_zero(harmonic):
    assert tfcore.rho_tf(harmonic, 1.5) == 0.0
    assert tfcore.rho_tf(harmonic, 0.0) == pytest.approx(LAMBDA_2 / 2)
    with pytest.raises(ValueError):
        tfcore.rho_tf(harmonic, -0.1)


def test_rpow_edge_cases():
    assert tfcore.rpow(0.0, 0.0) == 1.0
    assert tfcore.rpow(0.0, 2.5) == 0.0
    assert tfcore.rpow(2.0, 3.0) == pytest.approx(8.0)


def test_profile_csv_roundtrip(tmp_path, harmonic):
    prof = tfcore.cost_profile(harmonic, 3.5449, 257)
    path = tmp_path / "p.csv"
    tfcore.write_profile_csv(prof, path)
    back = tfcore.read_profile_csv(path)
    assert list(back) == ["r", "rho_tf", "f_tf", "h_tf"]
    np.testing.assert_array_equal(back["h_tf"], prof.h_tf)
    np.testing.assert_array_equal(back["r"], prof.grid)


def test_cost_profile_guards(harmonic):
    with pytest.raises(ValueError):
        tfcore.cost_profile(harmonic, 0.0)
    with pytest.raises(ValueError):
        tfcore.cost_profile(harmonic, 1.0, 10)
    assert math.isfinite(tfcore.cost_profile(harmonic, 1.0, 64).h_tf[0])
