import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from rotvortex import mustar, renorm, tfcore

I_TF_STAR = -0.376792176729293235


def smooth_measure(model, n=1025, r_dom=None, k=3.0):
    r_dom = model.r_tf if r_dom is None else r_dom
    grid = renorm.uniform_grid(r_dom, n)
    return renorm.RadialMeasure(grid, np.cos(k * grid) + 0.5, r_dom)


def test_potential_matches_quadrature(harmonic):
    nu = smooth_measure(harmonic, 2049)
    pot = renorm.solve_potential(nu, harmonic)

    def flux(t):
        return quad(lambda u: u * (np.cos(3 * u) + 0.5), 0, t)[0]

    for r in (0.1, 0.4, 0.8):
        exact = quad(lambda t: tfcore.rho_tf(harmonic, t) * flux(t) / t, r, harmonic.r_tf)[0]
        approx = np.interp(r, pot.grid, pot.h)
        assert approx == pytest.approx(exact, rel=1e-4)
    assert pot.h[-1] == 0.0


def test_potential_solves_the_discrete_equation(harmonic):
    # the flux form is the centered divergence stencil, so only roundoff remains
    for n in (257, 1025):
        nu = smooth_measure(harmonic, n)
        res = renorm.potential_residual(renorm.solve_potential(nu, harmonic), nu, harmonic)
        assert np.max(np.abs(res)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_interaction_is_a_quadratic_form(harmonic, seed, a, b):
    rng = np.random.default_rng(seed)
    grid = renorm.uniform_grid(harmonic.r_tf, 257)
    n1 = renorm.RadialMeasure(grid, rng.normal(size=257), harmonic.r_tf)
    n2 = renorm.RadialMeasure(grid, rng.normal(size=257), harmonic.r_tf)
    form, p12, p21 = renorm.pairing(n1, n2, harmonic)
    scale = abs(form) + 1e-12 + np.sqrt(renorm.energy(n1, harmonic, 0).interaction
                                        * renorm.energy(n2, harmonic, 0).interaction)
    assert p12 == pytest.approx(form, abs=1e-10 * scale)
    assert p21 == pytest.approx(form, abs=1e-10 * scale)
    mix = n1.scaled(a) + n2.scaled(b)
    i1 = renorm.energy(n1, harmonic, 0).interaction
    i2 = renorm.energy(n2, harmonic, 0).interaction
    lhs = renorm.energy(mix, harmonic, 0).interaction
    rhs = a * a * i1 + b * b * i2 + a * b * form
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)
    assert i1 >= 0 and lhs >= -1e-15


def test_self_pairing_is_twice_interaction(harmonic):
    nu = smooth_measure(harmonic, 513)
    form, _, _ = renorm.pairing(nu, nu, harmonic)
    assert renorm.energy(nu, harmonic, 0).interaction == pytest.approx(0.5 * form, rel=1e-13)


def test_zero_init_recovers_minimizer(harmonic, omega1):
    omega0 = 2 * omega1
    nu, rep = renorm.minimize(harmonic, omega0, renorm.zero_measure(harmonic, 2048))
    ref = mustar.mu_star(harmonic, omega0)
    assert rep.converged
    gap = renorm.weighted_l1(nu, renorm.from_density(ref, nu.grid)) / ref.total_mass
    assert gap < 0.02
    assert rep.total == pytest.approx(I_TF_STAR, rel=1e-3)
    assert nu.negative_mass() == 0.0


def test_below_critical_speed_minimizer_is_zero(harmonic, omega1):
    nu, rep = renorm.minimize(harmonic, 0.8 * omega1, renorm.zero_measure(harmonic, 512))
    assert nu.abs_mass() == 0.0 and rep.total == 0.0


def test_unbounded_domain_is_rejected(harmonic, omega1):
    r_dom = 0.5 * harmonic.r_tf  # inside {H < 0} at 2 omega1
    with pytest.raises(ValueError):
        renorm.minimize(harmonic, 2 * omega1, renorm.zero_measure(harmonic, 256, r_dom))


def test_stability_deficit_nonnegative(harmonic, omega1):
    omega0 = 2 * omega1
    grid = renorm.uniform_grid(harmonic.r_tf, 1024)
    ref = renorm.discrete_minimizer(harmonic, omega0, grid)
    rng = np.random.default_rng(3)
    for _ in range(10):
        bump = rng.normal() * np.cos(rng.uniform(1, 20) * grid)
        nu = renorm.RadialMeasure(grid, np.maximum(ref.density + bump, 0), harmonic.r_tf)
        assert renorm.check_stability(nu, harmonic, omega0) >= -1e-10


def test_measure_algebra_requires_same_grid(harmonic):
    a = renorm.zero_measure(harmonic, 64)
    b = renorm.zero_measure(harmonic, 65)
    with pytest.raises(ValueError):
        a + b


def test_outputs_roundtrip(tmp_path, harmonic):
    nu = smooth_measure(harmonic, 129)
    pot = renorm.solve_potential(nu, harmonic)
    renorm.write_measure_csv(nu, pot, tmp_path / "m.csv")
    back, h = renorm.read_measure_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.density, nu.density)
    np.testing.assert_array_equal(h, pot.h)
    rep = renorm.energy(nu, harmonic, 3.0)
    renorm.write_report_json(rep, tmp_path / "r.json", {"tag": 1})
    data = renorm.read_report_json(tmp_path / "r.json")
    assert data["total"] == rep.total and data["tag"] == 1
