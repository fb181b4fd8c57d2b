"""Concentric-circle vortex configurations that discretize |log eps| * mu*.

Circle k sits at radius rho_k = k / sqrt(L), L = |log eps|, and carries
N_k = floor(sqrt(L) rho_k m*(rho_k)) equally spaced points. The annulus of
width 1/sqrt(L) around rho_k holds L * mu* mass close to
2 pi sqrt(L) rho_k m*(rho_k), and each point stands for one vortex of mass
2 pi, so N_k points reproduce that mass.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.spatial.distance import pdist

from . import mustar as ms
from . import tfcore
from .tfcore import TfModel

MIN_POINTS = 4


class EmptyLatticeWarning(UserWarning):
    pass


class OverlapError(ValueError):
    pass


@dataclass(frozen=True)
class Circle:
    k: int
    rho_k: float
    n_k: int
    theta_k: float


@dataclass(frozen=True)
class VortexLattice:
    eps: float
    k0: int
    circles: tuple[Circle, ...]
    points: np.ndarray
    omega0: float
    s: float
    r_star: float
    density: ms.VortexDensity | None = field(default=None, repr=False, compare=False)

    @property
    def n_total(self) -> int:
        return int(self.points.shape[0])

    @property
    def log_eps(self) -> float:
        return float(-np.log(self.eps))

    @property
    def point_circle(self) -> np.ndarray:
        return np.repeat([c.k for c in self.circles], [c.n_k for c in self.circles]).astype(int)

    def summary(self) -> dict:
        return {"eps": self.eps, "n_total": self.n_total,
                "circles": [{"k": c.k, "rho_k": c.rho_k, "n_k": c.n_k} for c in self.circles]}

    def min_separation(self) -> float:
        if self.n_total < 2:
            return np.inf
        return float(pdist(self.points).min())


@dataclass(frozen=True)
class TrialMeasure:
    lattice: VortexLattice
    ball_radius: float
    amplitude: float

    def ball_mass(self) -> float:
        return self.amplitude * np.pi * self.ball_radius**2

    def total_mass(self) -> float:
        return self.ball_mass() * self.lattice.n_total

    def sample(self, x: np.ndarray, y: np.ndarray, subsamples: int = 4) -> np.ndarray:
        """Cell averages of the density on a uniform node grid (cells centred on nodes)."""
        return ball_cell_average(self.lattice.points, self.ball_radius, self.amplitude, x, y,
                                 subsamples)


def ball_cell_average(centers: np.ndarray, radius: float, amplitude: float, x: np.ndarray,
                      y: np.ndarray, subsamples: int = 4) -> np.ndarray:
    """Average of amplitude * sum 1_{B(c, radius)} over the grid cells around each node."""
    h = float(x[1] - x[0])
    out = np.zeros((x.size, y.size))
    offs = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    for cx, cy in np.atleast_2d(centers):
        pad = radius + h
        ix = np.nonzero(np.abs(x - cx) <= pad)[0]
        iy = np.nonzero(np.abs(y - cy) <= pad)[0]
        if ix.size == 0 or iy.size == 0:
            continue
        xx = x[ix][:, None, None, None] + h * offs[None, None, :, None] - cx
        yy = y[iy][None, :, None, None] + h * offs[None, None, None, :] - cy
        inside = (xx**2 + yy**2) <= radius**2
        out[np.ix_(ix, iy)] += amplitude * inside.mean(axis=(2, 3))
    return out


def circle_count(density: ms.VortexDensity, model: TfModel, rho_k: float, log_eps: float) -> int:
    m = float(ms.m_star_of_r(model, density.omega0, rho_k))
    return int(np.floor(np.sqrt(log_eps) * rho_k * m))


def build_lattice(model: TfModel, omega0: float, eps: float, k0: int | None = None,
                  density: ms.VortexDensity | None = None) -> VortexLattice:
    if not 0 < eps < np.exp(-1.0):
        raise ValueError("eps must satisfy 0 < eps < 1/e")
    if density is None and omega0 > tfcore.omega_c1(model):
        density = ms.mu_star(model, omega0)
    if omega0 <= tfcore.omega_c1(model) or density is None or density.total_mass == 0:
        warnings.warn("no nucleation: the lattice is empty", EmptyLatticeWarning, stacklevel=2)
        return VortexLattice(eps, k0 or 0, (), np.zeros((0, 2)), omega0, model.s, 0.0, density)
    log_eps = -np.log(eps)
    root = np.sqrt(log_eps)
    r_star = density.r_star
    candidates = []
    k = 1
    while k / root <= r_star:
        rho_k = k / root
        n_k = circle_count(density, model, rho_k, log_eps)
        # circles outside {H <= 0} are excluded even where m* > 0
        if float(tfcore.h_tf(model, omega0, rho_k)) <= 0 and n_k >= MIN_POINTS:
            candidates.append((k, rho_k, n_k))
        k += 1
    if k0 is None:
        k0 = candidates[0][0] if candidates else 0
    circles = tuple(Circle(k, rho_k, n_k, 2 * np.pi / n_k)
                    for k, rho_k, n_k in candidates if k >= k0)
    pts = []
    for c in circles:
        theta = (np.arange(c.n_k) + 0.5) * c.theta_k
        pts.append(np.column_stack((c.rho_k * np.cos(theta), c.rho_k * np.sin(theta))))
    points = np.vstack(pts) if pts else np.zeros((0, 2))
    lat = VortexLattice(eps, int(k0), circles, points, omega0, model.s, r_star, density)
    if not circles:
        warnings.warn(f"no circle qualifies at eps={eps}", EmptyLatticeWarning, stacklevel=2)
    return lat


def riemann_check(lattice: VortexLattice, test_fn, model: TfModel | None = None
                  ) -> tuple[float, float, float]:
    """(2 pi sum Phi(a_i), |log eps| int Phi mu*, |difference|) for a radial Phi(r)."""
    density = lattice.density
    radii = np.hypot(lattice.points[:, 0], lattice.points[:, 1]) if lattice.n_total else np.zeros(0)
    discrete = float(2.0 * np.pi * np.sum(np.asarray(test_fn(radii), dtype=float)))
    if density is None or density.total_mass == 0:
        return discrete, 0.0, abs(discrete)
    model = model or tfcore.tf_model(lattice.s)

    def integrand(r):
        return float(test_fn(np.asarray(r))) * float(ms.m_star_of_r(model, lattice.omega0, r)) * r

    val, _ = quad(integrand, 0.0, density.r_star, epsabs=1e-13, epsrel=1e-12, limit=200)
    continuum = lattice.log_eps * 2.0 * np.pi * val
    return discrete, continuum, abs(discrete - continuum)


def trial_measure(lattice: VortexLattice) -> TrialMeasure:
    if lattice.n_total == 0:
        raise ValueError("trial measure needs a non-empty lattice")
    sep = lattice.min_separation()
    if sep <= 2 * lattice.eps:
        raise OverlapError(f"points closer than 2 eps (min separation {sep:g})")
    return TrialMeasure(lattice, lattice.eps, 2.0 / lattice.eps**2)


def write_points_csv(lattice: VortexLattice, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "k"])
        for (x, y), k in zip(lattice.points, lattice.point_circle):
            w.writerow([repr(float(x)), repr(float(y)), int(k)])


def read_points_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    if data.size == 0:
        return np.zeros((0, 2)), np.zeros(0, dtype=int)
    return np.column_stack((data["x"], data["y"])), np.asarray(data["k"], dtype=int)


def write_summary_json(lattice: VortexLattice, path) -> None:
    with open(path, "w") as fh:
        json.dump(lattice.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_summary_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
