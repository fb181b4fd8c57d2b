"""Thomas-Fermi profile, first critical speed and the vortex cost/gain functions."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad


@dataclass(frozen=True)
class TrapParams:
    s: float = 2.0
    omega0: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.s) or self.s < 2:
            raise ValueError(f"trap exponent s must be >= 2, got {self.s}")
        if not np.isfinite(self.omega0) or self.omega0 <= 0:
            raise ValueError(f"omega0 must be > 0, got {self.omega0}")


@dataclass(frozen=True)
class TfModel:
    params: TrapParams
    lambda_tf: float
    r_tf: float
    etf_coeff: float

    @property
    def s(self) -> float:
        return self.params.s


@dataclass(frozen=True)
class CostProfile:
    grid: np.ndarray
    rho_tf: np.ndarray
    f_tf: np.ndarray
    h_tf: np.ndarray
    omega0: float
    omega1: float


def rpow(r, s: float):
    """r**s through exp(s log r), with 0**s = 0 for s > 0 and 0**0 = 1."""
    r = np.asarray(r, dtype=float)
    if s == 0:
        return np.ones_like(r)
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = np.exp(s * np.log(r[pos]))
    return out


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def build_tf_model(params: TrapParams) -> TfModel:
    s = params.s
    if s < 2:
        raise ValueError(f"trap exponent s must be >= 2, got {s}")
    lam = (2.0 * (s + 2.0) / (np.pi * s)) ** (s / (s + 2.0))
    r_tf = lam ** (1.0 / s)
    coeff = np.pi * s / (4.0 * (s + 1.0)) * lam ** (2.0 * (s + 1.0) / s)
    return TfModel(params=params, lambda_tf=lam, r_tf=r_tf, etf_coeff=coeff)


def tf_model(s: float = 2.0, omega0: float = 1.0) -> TfModel:
    return build_tf_model(TrapParams(s=s, omega0=omega0))


def rho_tf(model: TfModel, r):
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("radius must be nonnegative")
    out = 0.5 * np.maximum(model.lambda_tf - rpow(r_arr, model.s), 0.0)
    return _scalar_or_array(out, r)


def drho_tf(model: TfModel, r):
    """Radial derivative of the density inside the support (zero outside)."""
    r_arr = np.asarray(r, dtype=float)
    s = model.s
    out = np.where(r_arr < model.r_tf, -0.5 * s * rpow(r_arr, s - 1), 0.0)
    return _scalar_or_array(out, r)


def omega_c1(model: TfModel) -> float:
    return 0.5 * np.pi * model.lambda_tf


def f_tf(model: TfModel, omega0: float, r):
    """Closed-form rotational gain F(r) = -omega0 * int_r^R t rho(t) dt."""
    s, big_r = model.s, model.r_tf
    r_arr = np.minimum(np.asarray(r, dtype=float), big_r)
    rs = rpow(big_r, s)
    out = -0.25 * omega0 * (rs * (big_r**2 - r_arr**2)
                            - 2.0 / (s + 2.0) * (rpow(big_r, s + 2) - rpow(r_arr, s + 2)))
    return _scalar_or_array(out, r)


def f_tf_quadrature(model: TfModel, omega0: float, r):
    """Same quantity as f_tf, by adaptive quadrature of the defining integral."""
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    vals = np.empty_like(r_arr)
    for i, ri in enumerate(r_arr):
        if ri >= model.r_tf:
            vals[i] = 0.0
            continue
        integral, _ = quad(lambda t: t * rho_tf(model, t), ri, model.r_tf,
                           epsabs=1e-15, epsrel=1e-13, limit=200)
        vals[i] = -omega0 * integral
    return float(vals[0]) if np.ndim(r) == 0 else vals


def h_tf(model: TfModel, omega0: float, r):
    """Cost function H = rho/2 + F, closed form."""
    s, big_r, lam = model.s, model.r_tf, model.lambda_tf
    r_arr = np.minimum(np.asarray(r, dtype=float), big_r)
    rs = rpow(r_arr, s)
    out = (0.25 * (lam - rs)
           - 0.25 * omega0 * (lam * (big_r**2 - r_arr**2)
                              - 2.0 / (s + 2.0) * (lam * big_r**2 - rs * r_arr**2)))
    return _scalar_or_array(out, r)


def dh_over_r(model: TfModel, omega0: float, r):
    """H'(r)/r inside the support; finite at r = 0."""
    r_arr = np.asarray(r, dtype=float)
    s = model.s
    out = -0.25 * s * rpow(r_arr, s - 2) + omega0 * np.asarray(rho_tf(model, r_arr))
    out = np.where(r_arr < model.r_tf, out, 0.0)
    return _scalar_or_array(out, r)


def dh_tf(model: TfModel, omega0: float, r):
    r_arr = np.asarray(r, dtype=float)
    return _scalar_or_array(r_arr * dh_over_r(model, omega0, r_arr), r)


def d2h_tf(model: TfModel, omega0: float, r):
    r_arr = np.asarray(r, dtype=float)
    s = model.s
    out = (-0.25 * s * (s - 1) * rpow(r_arr, s - 2)
           + omega0 * np.asarray(rho_tf(model, r_arr))
           + omega0 * r_arr * np.asarray(drho_tf(model, r_arr)))
    out = np.where(r_arr < model.r_tf, out, 0.0)
    return _scalar_or_array(out, r)


def radial_grid(r_max: float, n_nodes: int) -> np.ndarray:
    return np.linspace(0.0, r_max, n_nodes)


def cost_profile(model: TfModel, omega0: float, n_nodes: int = 2048) -> CostProfile:
    if omega0 <= 0:
        raise ValueError("omega0 must be > 0")
    if n_nodes < 64:
        raise ValueError("cost_profile needs at least 64 nodes")
    r = radial_grid(model.r_tf, n_nodes)
    rho = np.asarray(rho_tf(model, r))
    f = np.asarray(f_tf(model, omega0, r))
    h = np.asarray(h_tf(model, omega0, r))
    # pin the edge values exactly; the closed forms leave rounding residue there
    f[-1] = 0.0
    h[-1] = 0.0
    rho[-1] = 0.0
    return CostProfile(grid=r, rho_tf=rho, f_tf=f, h_tf=h, omega0=omega0,
                       omega1=omega_c1(model))


def trapezoid_radial(r: np.ndarray, values: np.ndarray) -> float:
    """2*pi * int values(r) r dr by the composite trapezoid rule."""
    return float(2.0 * np.pi * np.trapezoid(values * r, r))


def write_profile_csv(profile: CostProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "rho_tf", "f_tf", "h_tf"])
        for row in zip(profile.grid, profile.rho_tf, profile.f_tf, profile.h_tf):
            w.writerow([repr(float(v)) for v in row])


def read_profile_csv(path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.asarray(data[name], dtype=float) for name in data.dtype.names}
