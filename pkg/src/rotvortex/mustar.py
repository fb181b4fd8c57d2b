"""The minimizing vortex density, its support radii and the limiting energy.

The density on the support is the weighted Laplacian
m(r) = div(rho^-1 grad H)(r) = 2*omega0 + (1/2) Laplacian(log rho)(r).
The minimizer of the renormalized energy is m on a ball B(R*), where R* is
fixed by the free-boundary condition h_mu(R*) + H(R*) = 0 with
h_mu the Dirichlet potential of the truncated density on B(r_dom).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from . import tfcore
from .tfcore import TfModel

EDGE_FRACTION = 1.0 - 1e-10
ROOT_XTOL = 1e-12


class NoNucleation(ValueError):
    """Raised when omega0 <= omega1: the cost function has no negative part."""


class SupportRadii(NamedTuple):
    r1: float
    r2: float
    r_star: float


@dataclass(frozen=True)
class VortexDensity:
    grid: np.ndarray
    m_star: np.ndarray
    mu_star: np.ndarray
    r1: float
    r2: float
    r_star: float
    total_mass: float
    i_tf: float
    omega0: float
    s: float
    r_dom: float
    support: str = "minimizer"

    def summary(self, model: TfModel) -> dict:
        return {
            "s": self.s, "omega0": self.omega0,
            "lambda_tf": model.lambda_tf, "r_tf": model.r_tf,
            "r1": self.r1, "r2": self.r2, "r_star": self.r_star,
            "total_mass": self.total_mass, "i_tf": self.i_tf,
        }

    def density_at(self, r):
        """Evaluate the (truncated, nonnegative) density at arbitrary radii."""
        r = np.asarray(r, dtype=float)
        if self.total_mass == 0.0:
            return np.zeros_like(r)
        inside = r <= self.r_star
        out = np.zeros_like(r)
        out[inside] = np.maximum(self.m_fn(r[inside]), 0.0)
        return out

    def m_fn(self, r):
        model = tfcore.tf_model(self.s)
        return m_star_of_r(model, self.omega0, r)


def _check_radius(model: TfModel, r: np.ndarray) -> None:
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    if np.any(r >= model.r_tf * EDGE_FRACTION):
        raise ValueError("m_star diverges at the edge of the Thomas-Fermi support")


def m_star_divergence(model: TfModel, omega0: float, r):
    """div(rho^-1 grad H) assembled from H', H'' and rho'."""
    r_arr = np.asarray(r, dtype=float)
    _check_radius(model, r_arr)
    rho = np.asarray(tfcore.rho_tf(model, r_arr))
    drho = np.asarray(tfcore.drho_tf(model, r_arr))
    q = np.asarray(tfcore.dh_over_r(model, omega0, r_arr))
    d2h = np.asarray(tfcore.d2h_tf(model, omega0, r_arr))
    dh = r_arr * q
    out = d2h / rho + q / rho - dh * drho / rho**2
    return float(out) if np.ndim(r) == 0 else out


def m_star_rational(model: TfModel, omega0: float, r):
    """2*omega0 + (1/2) Laplacian(log rho), written as a rational function of r."""
    r_arr = np.asarray(r, dtype=float)
    _check_radius(model, r_arr)
    s = model.s
    rho = np.asarray(tfcore.rho_tf(model, r_arr))
    out = 2.0 * omega0 - s * s * model.lambda_tf * tfcore.rpow(r_arr, s - 2) / (8.0 * rho**2)
    return float(out) if np.ndim(r) == 0 else out


def m_star_of_r(model: TfModel, omega0: float, r, check: bool = False):
    val = m_star_rational(model, omega0, r)
    if check:
        other = m_star_divergence(model, omega0, r)
        scale = np.maximum(1.0, np.abs(val))
        if np.any(np.abs(np.asarray(val) - other) > 1e-9 * scale):
            raise ArithmeticError("density evaluations disagree")
    return val


def harmonic_closed_forms(model: TfModel, omega0: float) -> tuple[float, float]:
    """Reference closed forms for r1/R and r2/R in the harmonic trap, A = omega0 R^2.

    r1 is exact. The r2 expression is kept verbatim for comparison; it does
    not coincide with the root of m_star.
    """
    if model.s != 2:
        raise ValueError("closed forms exist only for s = 2")
    a = omega0 * model.r_tf**2
    r1 = np.sqrt(1.0 - 2.0 / a)
    r2 = np.sqrt(1.0 - 1.0 / (4.0 * a) * (np.sqrt(1.0 + 3.0 / (2.0 * a)) - 1.0))
    return float(r1), float(r2)


def support_radii(model: TfModel, omega0: float) -> SupportRadii:
    """Roots of H (r1) and of m_star (r2), and their minimum."""
    if omega0 <= tfcore.omega_c1(model):
        raise NoNucleation(f"omega0={omega0} does not exceed omega1={tfcore.omega_c1(model)}")
    big_r = model.r_tf
    delta = 1e-8 * big_r
    r1 = brentq(lambda r: tfcore.h_tf(model, omega0, r), delta, big_r - delta,
                xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)
    hi = big_r * (1 - 1e-9)
    lo = delta
    if m_star_of_r(model, omega0, lo) <= 0:
        r2 = 0.0
    else:
        r2 = brentq(lambda r: m_star_of_r(model, omega0, r), lo, hi,
                    xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)
    return SupportRadii(float(r1), float(r2), float(min(r1, r2)))


def _log_weight_integral(model: TfModel, a: float, b: float) -> float:
    """int_a^b rho(t)/t dt for a <= b <= R."""
    s, lam = model.s, model.lambda_tf
    return 0.5 * (lam * np.log(b / a) - (b**s - a**s) / s)


def flux_of_density(model: TfModel, omega0: float, r: float) -> float:
    """int_0^r t m(t) dt = r H'(r) / rho(r)."""
    return float(r * r * tfcore.dh_over_r(model, omega0, r) / tfcore.rho_tf(model, r))


def free_boundary_residual(model: TfModel, omega0: float, radius: float, r_dom: float) -> float:
    """h(radius) + H(radius) for the density m truncated at `radius`."""
    flux = flux_of_density(model, omega0, radius)
    return flux * _log_weight_integral(model, radius, r_dom) + float(tfcore.h_tf(model, omega0, radius))


def free_boundary_radius(model: TfModel, omega0: float, r_dom: float | None = None) -> float:
    radii = support_radii(model, omega0)
    r_dom = model.r_tf if r_dom is None else r_dom
    upper = min(radii.r1, radii.r2, r_dom)
    lo = 1e-8 * model.r_tf
    f_lo = free_boundary_residual(model, omega0, lo, r_dom)
    f_hi = free_boundary_residual(model, omega0, upper * (1 - 1e-12), r_dom)
    if f_lo >= 0 or f_hi <= 0:
        raise ArithmeticError("free-boundary condition has no sign change below min(r1, r2)")
    return float(brentq(lambda x: free_boundary_residual(model, omega0, x, r_dom), lo,
                        upper * (1 - 1e-12), xtol=ROOT_XTOL, maxiter=500))


def _support_integrals(model: TfModel, omega0: float, r_star: float, n: int) -> tuple[float, float]:
    # trapezoid on a grid that ends exactly at the support edge, so the
    # integrands are smooth over the whole interval
    r = np.linspace(0.0, r_star, n)
    m = np.asarray(m_star_of_r(model, omega0, r))
    h = np.asarray(tfcore.h_tf(model, omega0, r))
    mass = tfcore.trapezoid_radial(r, m)
    energy = 0.5 * tfcore.trapezoid_radial(r, h * m)
    return mass, energy


def mu_star(model: TfModel, omega0: float, n_nodes: int = 2048, support: str = "minimizer",
            r_dom: float | None = None) -> VortexDensity:
    """Sample the minimizing density on a uniform grid over [0, r_dom].

    support="minimizer" (default) truncates m at the free-boundary radius.
    support="sublevel" truncates at min(r1, r2), i.e. [m]_+ on {H <= 0}.
    """
    if n_nodes < 256:
        raise ValueError("mu_star needs at least 256 nodes")
    if support not in ("minimizer", "sublevel"):
        raise ValueError(f"unknown support rule {support!r}")
    r_dom = model.r_tf if r_dom is None else float(r_dom)
    if not 0 < r_dom <= model.r_tf:
        raise ValueError("r_dom must lie in (0, R_tf]")
    grid = tfcore.radial_grid(r_dom, n_nodes)
    safe = np.minimum(grid, model.r_tf * (1 - 1e-6))
    m_vals = np.asarray(m_star_of_r(model, omega0, safe))
    if omega0 <= tfcore.omega_c1(model):
        zero = np.zeros_like(grid)
        return VortexDensity(grid, m_vals, zero, 0.0, 0.0, 0.0, 0.0, 0.0, omega0, model.s,
                             r_dom, support)
    radii = support_radii(model, omega0)
    if support == "minimizer":
        r_star = free_boundary_radius(model, omega0, r_dom)
    else:
        r_star = min(radii.r_star, r_dom)
    mu = np.where(grid <= r_star, np.maximum(m_vals, 0.0), 0.0)
    mass, energy = _support_integrals(model, omega0, r_star, max(n_nodes, 2049))
    return VortexDensity(grid, m_vals, mu, radii.r1, radii.r2, r_star, mass, energy, omega0,
                         model.s, r_dom, support)


def write_density_csv(density: VortexDensity, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "m_star", "mu_star"])
        for row in zip(density.grid, density.m_star, density.mu_star):
            w.writerow([repr(float(v)) for v in row])


def read_density_csv(path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.asarray(data[name], dtype=float) for name in data.dtype.names}


def write_summary_json(density: VortexDensity, model: TfModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(density.summary(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_summary_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)



