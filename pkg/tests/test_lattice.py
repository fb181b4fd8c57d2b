import math
import warnings

import numpy as np
import pytest

from rotvortex import lattice, mustar, tfcore


@pytest.fixture(scope="module")
def lat4(harmonic, omega1, density2):
    return lattice.build_lattice(harmonic, 2 * omega1, 1e-4, density=density2)


def test_circle_rule(harmonic, omega1, lat4):
    root = math.sqrt(lat4.log_eps)
    assert lat4.circles, "expected at least one circle at eps=1e-4"
    for c in lat4.circles:
        assert c.rho_k == pytest.approx(c.k / root)
        m = mustar.m_star_of_r(harmonic, 2 * omega1, c.rho_k)
        assert c.n_k == math.floor(root * c.rho_k * m)
        assert c.n_k >= lattice.MIN_POINTS
        assert tfcore.h_tf(harmonic, 2 * omega1, c.rho_k) <= 0
        assert c.theta_k == pytest.approx(2 * math.pi / c.n_k)
        assert c.rho_k <= lat4.r_star
    assert lat4.n_total == sum(c.n_k for c in lat4.circles)


def test_points_sit_on_their_circles(lat4):
    radii = np.hypot(lat4.points[:, 0], lat4.points[:, 1])
    expected = np.repeat([c.rho_k for c in lat4.circles], [c.n_k for c in lat4.circles])
    np.testing.assert_allclose(radii, expected, rtol=1e-13)
    first = lat4.circles[0]
    ang = math.atan2(lat4.points[0, 1], lat4.points[0, 0])
    assert ang == pytest.approx(0.5 * first.theta_k)


def test_mass_riemann_sum_is_close(lat4, harmonic):
    d, c, err = lattice.riemann_check(lat4, lambda r: np.ones_like(np.asarray(r, float)), harmonic)
    assert c == pytest.approx(lat4.log_eps * lat4.density.total_mass, rel=1e-6)
    assert err < 0.5 * c


def test_no_nucleation_gives_empty_lattice(harmonic, omega1):
    with pytest.warns(lattice.EmptyLatticeWarning):
        lat = lattice.build_lattice(harmonic, 0.5 * omega1, 0.01)
    assert lat.n_total == 0 and lat.circles == ()


def test_eps_guard(harmonic, omega1):
    with pytest.raises(ValueError):
        lattice.build_lattice(harmonic, 2 * omega1, 0.5)


@pytest.mark.filterwarnings("ignore::rotvortex.lattice.EmptyLatticeWarning")
def test_k0_skips_inner_circles(harmonic, omega1, density2, lat4):
    later = lattice.build_lattice(harmonic, 2 * omega1, 1e-4, k0=lat4.k0 + 1, density=density2)
    assert all(c.k >= lat4.k0 + 1 for c in later.circles)
    assert later.n_total <= lat4.n_total


def test_trial_measure_and_overlap(lat4):
    trial = lattice.trial_measure(lat4)
    assert trial.ball_mass() == pytest.approx(2 * math.pi)
    crowded = lattice.VortexLattice(0.05, 1, (), np.array([[0.0, 0.0], [0.05, 0.0]]), 1.0, 2.0, 0.5)
    with pytest.raises(lattice.OverlapError):
        lattice.trial_measure(crowded)


def test_ball_cell_average_mass():
    ax = np.linspace(-1, 1, 401)
    vals = lattice.ball_cell_average(np.array([[0.1, -0.2]]), 0.1, 3.0, ax, ax, subsamples=8)
    h = ax[1] - ax[0]
    assert vals.sum() * h * h == pytest.approx(3.0 * math.pi * 0.01, rel=5e-3)


def test_outputs_roundtrip(tmp_path, lat4):
    lattice.write_points_csv(lat4, tmp_path / "p.csv")
    pts, k = lattice.read_points_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(pts, lat4.points)
    np.testing.assert_array_equal(k, lat4.point_circle)
    lattice.write_summary_json(lat4, tmp_path / "s.json")
    assert lattice.read_summary_json(tmp_path / "s.json")["n_total"] == lat4.n_total


def test_empty_points_roundtrip(tmp_path, harmonic, omega1):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lat = lattice.build_lattice(harmonic, 0.5 * omega1, 0.01)
    lattice.write_points_csv(lat, tmp_path / "e.csv")
    pts, k = lattice.read_points_csv(tmp_path / "e.csv")
    assert pts.shape == (0, 2) and k.size == 0
