"""Renormalized energy of radial vorticity measures and its convex minimization.

A radial measure is a nodal density nu(r_i) dA on a uniform grid over
[0, r_dom]. With the flux M(r) = int_0^r t nu dt the weighted Dirichlet
problem -div(rho^-1 grad h) = nu, h(r_dom) = 0 integrates to
h(r) = int_r^{r_dom} rho M / t dt, and the energy is

    I[nu] = pi int rho M^2 / r dr + 2 pi int (rho/2 |nu| + F nu) r dr.

The discretization is finite-volume: nodal values are cell averages over
dual cells, fluxes live on the faces, and the potential is the midpoint-rule
integral over faces. The discrete energy is an exact quadratic-plus-l1
function of the nodal values with an exact gradient.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import mustar as ms
from . import tfcore
from .tfcore import TfModel


class NotConverged(RuntimeError):
    def __init__(self, message, measure=None, trace=None):
        super().__init__(message)
        self.measure = measure
        self.trace = trace or []


@dataclass(frozen=True)
class RadialMeasure:
    grid: np.ndarray
    density: np.ndarray
    r_dom: float

    def __post_init__(self):
        if self.grid.shape != self.density.shape:
            raise ValueError("grid and density shapes differ")
        if not np.all(np.isfinite(self.density)):
            raise ValueError("density must be finite")

    @property
    def n(self) -> int:
        return self.grid.size

    def cell_areas(self) -> np.ndarray:
        edges = np.concatenate(([0.0], 0.5 * (self.grid[1:] + self.grid[:-1]), [self.grid[-1]]))
        return np.pi * (edges[1:] ** 2 - edges[:-1] ** 2)

    def mass(self) -> float:
        return float(np.sum(self.cell_areas() * self.density))

    def abs_mass(self) -> float:
        return float(np.sum(self.cell_areas() * np.abs(self.density)))

    def negative_mass(self) -> float:
        return float(np.sum(self.cell_areas() * np.maximum(-self.density, 0.0)))

    def __add__(self, other: RadialMeasure) -> RadialMeasure:
        _same_grid(self, other)
        return RadialMeasure(self.grid, self.density + other.density, self.r_dom)

    def __sub__(self, other: RadialMeasure) -> RadialMeasure:
        _same_grid(self, other)
        return RadialMeasure(self.grid, self.density - other.density, self.r_dom)

    def scaled(self, c: float) -> RadialMeasure:
        return RadialMeasure(self.grid, c * self.density, self.r_dom)


@dataclass(frozen=True)
class PotentialH:
    grid: np.ndarray
    h: np.ndarray
    flux: np.ndarray


@dataclass(frozen=True)
class RenormReport:
    interaction: float
    cost: float
    gain: float
    total: float
    converged: bool = True
    iterations: int = 0
    trace: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"interaction": self.interaction, "cost": self.cost, "gain": self.gain,
                "total": self.total, "converged": self.converged,
                "iterations": self.iterations,
                "trace": [[int(i), float(e)] for i, e in self.trace]}


def _same_grid(a: RadialMeasure, b: RadialMeasure) -> None:
    if a.grid.shape != b.grid.shape or not np.array_equal(a.grid, b.grid):
        raise ValueError("measures live on different grids")


def uniform_grid(r_dom: float, n_nodes: int) -> np.ndarray:
    return tfcore.radial_grid(r_dom, n_nodes)


def zero_measure(model: TfModel, n_nodes: int = 2048, r_dom: float | None = None) -> RadialMeasure:
    r_dom = model.r_tf if r_dom is None else r_dom
    grid = uniform_grid(r_dom, n_nodes)
    return RadialMeasure(grid, np.zeros_like(grid), r_dom)


def from_density(density: ms.VortexDensity, grid: np.ndarray | None = None) -> RadialMeasure:
    """The minimizing density as a RadialMeasure, optionally resampled."""
    if grid is None:
        return RadialMeasure(density.grid.copy(), density.mu_star.copy(), density.r_dom)
    return RadialMeasure(grid, density.density_at(grid), float(grid[-1]))


class _Discretization:
    """Finite-volume weights for one uniform nodal grid.

    Node i owns the dual cell [r_i - dr/2, r_i + dr/2] clipped to [0, r_dom];
    the flux M lives on the faces r_{i+1/2}. Cumulative cell masses give M,
    and the midpoint rule over faces gives h at the nodes. The map from nodal
    values to face fluxes is injective, so no grid-scale mode hides from the
    interaction term.
    """

    def __init__(self, grid: np.ndarray, model: TfModel, omega0: float = 0.0):
        if grid.size < 3:
            raise ValueError("need at least 3 grid nodes")
        self.r = grid
        self.dr = float(grid[1] - grid[0])
        edges = np.concatenate(([0.0], 0.5 * (grid[1:] + grid[:-1]), [grid[-1]]))
        self.area = np.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
        self.faces = edges[1:-1]
        self.rho = np.asarray(tfcore.rho_tf(model, grid))
        self.f = np.asarray(tfcore.f_tf(model, omega0, grid)) if omega0 else np.zeros_like(grid)
        self.face_weight = self.dr * np.asarray(tfcore.rho_tf(model, self.faces)) / self.faces

    def flux(self, nu: np.ndarray) -> np.ndarray:
        """M at the faces: int_0^{r_f} t nu dt."""
        return np.cumsum(self.area[:-1] * nu[:-1]) / (2.0 * np.pi)

    def potential(self, flux: np.ndarray) -> np.ndarray:
        seg = self.face_weight * flux
        out = np.zeros(self.r.size)
        out[:-1] = np.cumsum(seg[::-1])[::-1]
        return out

    def interaction(self, flux: np.ndarray) -> float:
        return float(np.pi * np.sum(self.face_weight * flux**2))

    def metric_gradient(self, flux: np.ndarray) -> np.ndarray:
        """Derivative of the interaction divided by the cell area; equals h."""
        return self.potential(flux)

    def interaction_gradient(self, flux: np.ndarray) -> np.ndarray:
        return self.area * self.potential(flux)

    def hessian(self) -> np.ndarray:
        """Second derivative of the interaction term as a dense matrix."""
        n = self.r.size
        a = np.tril(np.ones((n - 1, n))) * (self.area / (2.0 * np.pi))[None, :]
        a[:, -1] = 0.0
        return a.T @ ((2.0 * np.pi * self.face_weight)[:, None] * a)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.area * values))

    def cost(self, nu: np.ndarray) -> float:
        return float(np.sum(self.area * 0.5 * self.rho * np.abs(nu)))

    def gain(self, nu: np.ndarray) -> float:
        return float(np.sum(self.area * self.f * nu))


def solve_potential(nu: RadialMeasure, model: TfModel, tol: float = 0.0) -> PotentialH:
    """h_nu by quadrature; tol is accepted for interface symmetry with the 2D solver.

    The returned flux is sampled at the nodes (face values interpolated, zero
    at the origin) so that it shares the measure's grid.
    """
    if nu.n < 3:
        raise ValueError("need at least 3 grid nodes")
    if nu.r_dom > model.r_tf * (1 + 1e-12):
        raise ValueError("r_dom must not exceed the Thomas-Fermi radius")
    disc = _Discretization(nu.grid, model)
    flux = disc.flux(nu.density)
    nodal = np.zeros(nu.n)
    nodal[1:-1] = 0.5 * (flux[1:] + flux[:-1])
    nodal[-1] = flux[-1] + nu.density[-1] * disc.area[-1] / (2.0 * np.pi)
    return PotentialH(nu.grid, disc.potential(flux), nodal)


def potential_residual(pot: PotentialH, nu: RadialMeasure, model: TfModel) -> np.ndarray:
    """div(rho^-1 grad h) + nu at interior nodes by centered differences."""
    r = pot.grid
    dr = r[1] - r[0]
    rho = np.asarray(tfcore.rho_tf(model, r))
    r_half = 0.5 * (r[1:] + r[:-1])
    rho_half = np.asarray(tfcore.rho_tf(model, r_half))
    face = r_half / rho_half * np.diff(pot.h) / dr
    div = np.diff(face) / dr / r[1:-1]
    mask = rho[1:-1] > 0
    return np.where(mask, div + nu.density[1:-1], 0.0)


def energy(nu: RadialMeasure, model: TfModel, omega0: float) -> RenormReport:
    disc = _Discretization(nu.grid, model, omega0)
    flux = disc.flux(nu.density)
    inter = disc.interaction(flux)
    cost = disc.cost(nu.density)
    gain = disc.gain(nu.density)
    return RenormReport(inter, cost, gain, inter + cost + gain)


def pairing(nu1: RadialMeasure, nu2: RadialMeasure, model: TfModel) -> tuple[float, float, float]:
    """(int rho^-1 grad h1 . grad h2, int nu1 h2, int nu2 h1)."""
    _same_grid(nu1, nu2)
    disc = _Discretization(nu1.grid, model)
    m1, m2 = disc.flux(nu1.density), disc.flux(nu2.density)
    grad_form = float(2.0 * np.pi * np.sum(disc.face_weight * m1 * m2))
    h1, h2 = disc.potential(m1), disc.potential(m2)
    return grad_form, disc.integrate(nu1.density * h2), disc.integrate(nu2.density * h1)


def step_size(disc: _Discretization, n_iter: int = 200, seed: int = 0) -> float:
    """0.9 / (largest eigenvalue of the interaction Hessian in the area metric)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(disc.r.size)
    lam = 1.0
    for _ in range(n_iter):
        w = disc.metric_gradient(disc.flux(v))
        lam_new = float(np.sum(disc.area * v * w) / np.sum(disc.area * v * v))
        v = w / np.sqrt(np.sum(disc.area * w * w))
        if abs(lam_new - lam) <= 1e-10 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return 0.9 / lam


def _soft_threshold(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def minimize(model: TfModel, omega0: float, init: RadialMeasure, max_iter: int = 50000,
             tol: float = 1e-10, accelerate: bool = True, polish: bool = True,
             raise_on_failure: bool = False) -> tuple[RadialMeasure, RenormReport]:
    """Proximal-gradient minimization over nodal radial densities.

    The smooth part (interaction + gain) takes a gradient step in the area
    metric; the weighted l1 cost is handled by its proximal map, a
    soft-threshold at rho_i/2 * step. With accelerate=True the iteration uses
    Nesterov momentum with a restart whenever the energy goes up.

    The interaction term is a negative-order norm, so grid-scale components
    of the error barely move the energy and decay very slowly under any
    first-order method. With polish=True the support identified by the
    descent is handed to an active-set solve of the optimality system, which
    is kept only if it lowers the energy and the optimality residual.
    """
    if not np.all(np.isfinite(init.density)):
        raise ValueError("initial density must be finite")
    if float(tfcore.h_tf(model, omega0, init.r_dom)) < 0:
        # mass parked next to the Dirichlet boundary would cost ~H < 0 with
        # vanishing interaction, so the energy has no lower bound
        raise ValueError("r_dom lies where H < 0; the energy is unbounded below there")
    disc = _Discretization(init.grid, model, omega0)
    tau = step_size(disc)
    thresh = 0.5 * disc.rho * tau

    def total(nu):
        fl = disc.flux(nu)
        return disc.interaction(fl) + disc.cost(nu) + disc.gain(nu)

    def prox_step(y):
        grad = disc.metric_gradient(disc.flux(y)) + disc.f
        return _soft_threshold(y - tau * grad, thresh)

    x = init.density.astype(float).copy()
    y = x.copy()
    t_mom = 1.0
    e_old = total(x)
    trace = [(0, e_old)]
    converged = False
    it = 0
    small_steps = 0
    for it in range(1, max_iter + 1):
        x_new = prox_step(y)
        e_new = total(x_new)
        if accelerate and e_new > e_old:
            # momentum overshoot: restart from the last accepted iterate
            t_mom = 1.0
            y = x.copy()
            x_new = prox_step(y)
            e_new = total(x_new)
        if accelerate:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
            y = x_new + ((t_mom - 1.0) / t_next) * (x_new - x)
            t_mom = t_next
        else:
            y = x_new
        decrease = e_old - e_new
        x = x_new
        if it % 50 == 0 or it == 1:
            trace.append((it, e_new))
        scale = max(abs(e_new), 1e-300)
        if 0 <= decrease < tol * scale:
            small_steps += 1
        else:
            small_steps = 0
        e_old = e_new
        # several consecutive tiny decreases, so one lucky step does not stop it
        if small_steps >= 20 or (e_new == 0.0 and np.all(x == 0.0) and it > 1 and decrease == 0):
            converged = True
            break
    trace.append((it, e_old))
    if polish and np.any(x != 0):
        candidate = _active_set_polish(disc, x)
        e_cand = total(candidate)
        if (e_cand <= e_old + 1e-12 * abs(e_old)
                and _kkt_violation(disc, candidate) <= _kkt_violation(disc, x)):
            x = candidate
            trace.append((it + 1, e_cand))
    out = RadialMeasure(init.grid, x, init.r_dom)
    rep = energy(out, model, omega0)
    report = RenormReport(rep.interaction, rep.cost, rep.gain, rep.total, converged, it, trace)
    if not converged and raise_on_failure:
        raise NotConverged(f"no convergence after {max_iter} iterations", out, trace)
    return out, report


def _kkt_violation(disc: _Discretization, x: np.ndarray) -> float:
    """Largest violation of the optimality conditions, in potential units."""
    g = disc.metric_gradient(disc.flux(x)) + disc.f
    half = 0.5 * disc.rho
    xi = x
    on = xi != 0
    v_on = np.abs(g[on] + half[on] * np.sign(xi[on]))
    v_off = np.maximum(np.abs(g[~on]) - half[~on], 0.0)
    return float(max(v_on.max(initial=0.0), v_off.max(initial=0.0)))


def _active_set_polish(disc: _Discretization, x: np.ndarray, max_rounds: int = 30) -> np.ndarray:
    """Solve the optimality system exactly on the support found by the descent.

    Rounds of a primal-dual active-set method: fix the signs on the current
    support, solve the linear system there, then move nodes whose sign flipped
    or whose inactive condition fails.
    """
    # the boundary node generates no flux inside the domain, so it is left at 0
    q = disc.hessian()[:-1, :-1]
    area = disc.area[:-1]
    half = 0.5 * disc.rho[:-1]
    f = disc.f[:-1]
    sign = np.sign(x[:-1])
    for _ in range(max_rounds):
        act = sign != 0
        y = np.zeros_like(f)
        if act.any():
            rhs = -area[act] * (f[act] + half[act] * sign[act])
            qa = q[np.ix_(act, act)]
            ya = np.linalg.solve(qa, rhs)
            for _ in range(3):
                # iterative refinement; the system is badly conditioned
                ya += np.linalg.solve(qa, rhs - qa @ ya)
            y[act] = ya
        g = (q @ y) / area + f
        new_sign = sign.copy()
        flipped = act & (np.sign(y) != sign)
        new_sign[flipped] = 0.0
        inactive = ~act
        new_sign[inactive & (g < -half)] = 1.0
        new_sign[inactive & (g > half)] = -1.0
        if np.array_equal(new_sign, sign):
            return np.append(y, 0.0)
        sign = new_sign
    return x


def weighted_l1(a: RadialMeasure, b: RadialMeasure) -> float:
    """2 pi int |a - b| r dr."""
    return (a - b).abs_mass()


@lru_cache(maxsize=16)
def _discrete_minimizer(s: float, omega0: float, n: int, r_dom: float) -> RadialMeasure:
    model = tfcore.tf_model(s)
    out, _ = minimize(model, omega0, zero_measure(model, n, r_dom))
    return out


def discrete_minimizer(model: TfModel, omega0: float, grid: np.ndarray) -> RadialMeasure:
    """Minimizer of the discrete functional on a uniform grid (cached)."""
    out = _discrete_minimizer(model.s, float(omega0), int(grid.size), float(grid[-1]))
    return RadialMeasure(grid, out.density.copy(), float(grid[-1]))


def check_stability(nu: RadialMeasure, model: TfModel, omega0: float,
                    reference: RadialMeasure | None = None) -> float:
    """I[nu] - I[mu*] - int (1/2rho)|grad h_{nu - mu*}|^2 on the measure's grid.

    By default mu* is the minimizer of the same discrete functional, so the
    value is nonnegative up to solver error. Passing the sampled continuum
    minimizer instead adds an O(dr^2) consistency error of either sign.
    """
    if reference is None:
        reference = discrete_minimizer(model, omega0, nu.grid)
    e_nu = energy(nu, model, omega0).total
    e_ref = energy(reference, model, omega0).total
    diff = nu - reference
    inter = energy(diff, model, 0.0).interaction
    return e_nu - e_ref - inter


def write_measure_csv(nu: RadialMeasure, pot: PotentialH, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "nu", "h_nu"])
        for row in zip(nu.grid, nu.density, pot.h):
            w.writerow([repr(float(v)) for v in row])


def read_measure_csv(path) -> tuple[RadialMeasure, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    grid = np.asarray(data["r"], dtype=float)
    return RadialMeasure(grid, np.asarray(data["nu"], dtype=float), float(grid[-1])), \
        np.asarray(data["h_nu"], dtype=float)


def write_report_json(report: RenormReport, path, extra: dict | None = None) -> None:
    payload = report.as_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
