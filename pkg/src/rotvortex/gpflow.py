"""Desk-scale Gross-Pitaevskii ground states and their vorticity.

The 2D functional on the square [-X, X]^2 with zero boundary values is

    E[psi] = int 1/2 |grad psi|^2 - Omega psi* L psi + eps^-2 (r^s |psi|^2 + |psi|^4),

with L = -i (x d_y - y d_x), Omega = omega0 |log eps| and ||psi||_2 = 1. The
Laplacian is the 5-point stencil and L uses centered differences, so the
discrete energy is a real quadratic-plus-quartic form with an exact gradient.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dstn, idstn
from scipy.linalg import solve_banded

from . import lattice as lat_mod
from . import mustar as ms
from . import renorm
from . import tfcore
from .field2d import Grid2D, read_block, write_block


class GpNotConverged(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


# ---------------------------------------------------------------------------
# radial vortex-free profile


@dataclass(frozen=True)
class RadialProfileG:
    grid: np.ndarray
    g: np.ndarray
    lambda_hat: float
    e_hat: float
    eps: float
    s: float
    converged: bool = True
    iterations: int = 0
    residual: float = float("nan")

    def mass(self) -> float:
        dr = self.grid[1] - self.grid[0]
        return float(2 * np.pi * np.sum(self.grid * self.g**2) * dr)

    def at(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        # even extension through the origin, zero beyond the last cell
        rr = np.concatenate(([-self.grid[0]], self.grid, [self.grid[-1] + (self.grid[1] - self.grid[0])]))
        gg = np.concatenate(([self.g[0]], self.g, [0.0]))
        return np.interp(r, rr, gg, right=0.0)

    def log_derivative(self, r) -> np.ndarray:
        """d/dr log g by centered differences of log g, interpolated."""
        lg = np.log(np.maximum(self.g, 1e-300))
        d = np.gradient(lg, self.grid)
        return np.interp(np.asarray(r, dtype=float), self.grid, d)


class _RadialOperator:
    """Cell-centred radial grid r_j = (j + 1/2) dr with g = 0 one cell past R_max."""

    def __init__(self, eps: float, s: float, r_max: float, n: int):
        self.dr = r_max / n
        self.r = (np.arange(n) + 0.5) * self.dr
        self.faces = np.arange(1, n + 1) * self.dr  # r_{j+1/2}
        self.eps = eps
        self.v = tfcore.rpow(self.r, s)
        self.w = 2 * np.pi * self.r * self.dr  # cell areas (exact for the annuli)

    def laplacian_bands(self) -> tuple[np.ndarray, np.ndarray]:
        """(-1/2) Laplacian as tridiagonal (lower/upper off-diagonal, diagonal)."""
        dr2 = self.dr**2
        up = -0.5 * self.faces / (self.r * dr2)
        lo = np.zeros_like(up)
        lo[1:] = -0.5 * self.faces[:-1] / (self.r[1:] * dr2)
        diag = -up.copy()
        diag[1:] += -lo[1:]
        return lo, up, diag

    def energy(self, g: np.ndarray) -> float:
        dg = np.diff(np.append(g, 0.0)) / self.dr
        kin = 0.5 * float(np.sum(2 * np.pi * self.faces * self.dr * dg**2))
        pot = float(np.sum(self.w * (self.v * g**2 + g**4))) / self.eps**2
        return kin + pot

    def apply_h(self, g: np.ndarray) -> np.ndarray:
        lo, up, diag = self.laplacian_bands()
        out = diag * g
        out[:-1] += up[:-1] * g[1:]
        out[1:] += lo[1:] * g[:-1]
        return out + (self.v + 2 * g**2) * g / self.eps**2

    def normalize(self, g: np.ndarray) -> np.ndarray:
        return g / np.sqrt(np.sum(self.w * g**2))


def solve_radial_profile(eps: float, s: float = 2.0, n_nodes: int = 2048, tol: float = 1e-13,
                         r_max: float | None = None, max_iter: int = 2000,
                         tau: float | None = None) -> RadialProfileG:
    """Vortex-free profile by an implicit (backward-Euler) normalized gradient flow.

    Each step solves (1 + tau A[g_n]) g = g_n with A = -1/2 Laplacian +
    eps^-2 (r^s + 2 g_n^2) and renormalizes. lambda_hat is eps^2 times the
    Lagrange multiplier, the quantity that tends to lambda_TF.
    """
    if not 0 < eps <= 0.2:
        raise ValueError("eps must lie in (0, 0.2]")
    if n_nodes < 1024:
        raise ValueError("radial profile needs at least 1024 nodes")
    model = tfcore.tf_model(s)
    if r_max is None:
        # room for the whole exponential tail window used by profile_tail_fit
        r_max = max(model.r_tf + 0.5, model.r_tf + 8 * eps ** (2 / 3))
    if r_max < model.r_tf + 0.5:
        raise ValueError("r_max must be at least R_tf + 0.5")
    op = _RadialOperator(eps, s, r_max, n_nodes)
    tau = 10.0 * eps**2 if tau is None else tau
    lo, up, diag = op.laplacian_bands()
    g = op.normalize(np.sqrt(np.asarray(tfcore.rho_tf(model, op.r))) + 1e-3)
    e_old = op.energy(g)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ab = np.zeros((3, g.size))
        ab[0, 1:] = tau * up[:-1]
        ab[1] = 1.0 + tau * (diag + (op.v + 2 * g**2) / eps**2)
        ab[2, :-1] = tau * lo[1:]
        g = op.normalize(solve_banded((1, 1), ab, g))
        e_new = op.energy(g)
        if abs(e_old - e_new) <= tol * abs(e_new):
            converged = True
            e_old = e_new
            break
        e_old = e_new
    hg = op.apply_h(g)
    mult = float(np.sum(op.w * g * hg))
    resid = float(np.sqrt(np.sum(op.w * (hg - mult * g) ** 2)))
    return RadialProfileG(op.r, np.abs(g), eps**2 * mult, e_old, eps, s, converged, it, resid)


def profile_tail_fit(profile: RadialProfileG, r_tf: float, n_points: int = 64
                     ) -> tuple[float, float, float]:
    """Least-squares line through log g^2 on [R + eps^(2/3), R + 5 eps^(2/3)].

    Returns (slope, intercept, R^2).
    """
    e23 = profile.eps ** (2 / 3)
    r = np.linspace(r_tf + e23, r_tf + 5 * e23, n_points)
    y = np.log(profile.at(r) ** 2)
    slope, icpt = np.polyfit(r, y, 1)
    fit = slope * r + icpt
    r2 = 1.0 - np.sum((y - fit) ** 2) / np.sum((y - y.mean()) ** 2)
    return float(slope), float(icpt), float(r2)


def profile_inner_error(profile: RadialProfileG, model: tfcore.TfModel) -> tuple[float, float]:
    """(sup |g^2 - rho_TF| on [0, R - eps^(2/3) L^(2/3)], eps^(2/3) L^(2/3))."""
    scale = profile.eps ** (2 / 3) * (-math.log(profile.eps)) ** (2 / 3)
    inner = profile.grid <= model.r_tf - scale
    err = np.abs(profile.g[inner] ** 2 - np.asarray(tfcore.rho_tf(model, profile.grid[inner])))
    return float(err.max()), scale


# ---------------------------------------------------------------------------
# 2D rotating minimization


@dataclass
class GpSchedule:
    max_iter: int = 6000
    tol: float = 1e-6
    n_starts: int = 3
    seeds: tuple[int, ...] = (0, 1, 2)
    noise: float = 0.01
    extra_vortices: int = 2


@dataclass
class GpState:
    grid: Grid2D
    psi: np.ndarray
    eps: float
    omega0: float
    s: float
    energy_trace: list = field(default_factory=list)
    converged: bool = False
    residual: float = float("nan")
    chemical_potential: float = float("nan")
    iterations: int = 0
    seed: int = 0
    starts: list = field(default_factory=list)

    @property
    def omega(self) -> float:
        return self.omega0 * -math.log(self.eps)

    @property
    def energy(self) -> float:
        return self.energy_trace[-1] if self.energy_trace else float("nan")


def default_grid(eps: float, s: float = 2.0, n: int | None = None) -> Grid2D:
    """Square of half-width R_tf + 6 eps^(2/3); spacing at most eps/2."""
    model = tfcore.tf_model(s)
    extent = model.r_tf + 6.0 * eps ** (2 / 3)
    n_min = int(math.ceil(2 * extent / (0.5 * eps))) + 1
    n = max(n_min, 129) if n is None else n
    return Grid2D(n, extent)


class GpOperator:
    """Discrete GP energy, gradient and preconditioner on the interior nodes."""

    def __init__(self, grid: Grid2D, eps: float, omega0: float, s: float):
        if grid.spacing > 0.5 * eps * (1 + 1e-12):
            raise ValueError(f"grid spacing {grid.spacing:g} exceeds eps/2 = {eps / 2:g}")
        self.grid = grid
        self.eps = eps
        self.s = s
        self.omega = omega0 * -math.log(eps)
        self.h = grid.spacing
        ax = grid.axis[1:-1]
        self.x, self.y = np.meshgrid(ax, ax, indexing="ij")
        self.m = ax.size
        r = np.hypot(self.x, self.y)
        self.v = tfcore.rpow(r, s)
        model = tfcore.tf_model(s)
        self.lambda_tf = model.lambda_tf
        k = np.arange(1, self.m + 1)
        lam1 = (2 - 2 * np.cos(np.pi * k / (self.m + 1))) / self.h**2
        self.lap_eig = lam1[:, None] + lam1[None, :]
        self.c0 = model.lambda_tf / eps**2
        veff = np.maximum(self.v / eps**2 - 0.5 * self.omega**2 * r**2, 0.0)
        veff += 2 * np.asarray(tfcore.rho_tf(model, r)) / eps**2
        self.pre_w = np.sqrt(self.c0 / (self.c0 + veff))

    def _pad(self, p: np.ndarray) -> np.ndarray:
        q = np.zeros((self.m + 2, self.m + 2), dtype=p.dtype)
        q[1:-1, 1:-1] = p
        return q

    def neg_laplacian(self, p: np.ndarray) -> np.ndarray:
        q = self._pad(p)
        return (4 * p - q[2:, 1:-1] - q[:-2, 1:-1] - q[1:-1, 2:] - q[1:-1, :-2]) / self.h**2

    def dx(self, p: np.ndarray) -> np.ndarray:
        q = self._pad(p)
        return (q[2:, 1:-1] - q[:-2, 1:-1]) / (2 * self.h)

    def dy(self, p: np.ndarray) -> np.ndarray:
        q = self._pad(p)
        return (q[1:-1, 2:] - q[1:-1, :-2]) / (2 * self.h)

    def ang(self, p: np.ndarray) -> np.ndarray:
        """L p = -i (x d_y - y d_x) p."""
        return -1j * (self.x * self.dy(p) - self.y * self.dx(p))

    def hamiltonian(self, p: np.ndarray) -> np.ndarray:
        """dE/d(conj psi) divided by the cell area."""
        return (0.5 * self.neg_laplacian(p) - self.omega * self.ang(p)
                + (self.v + 2 * np.abs(p) ** 2) * p / self.eps**2)

    def energy_terms(self, p: np.ndarray) -> dict:
        a = self.h**2
        kin = 0.5 * a * float(np.real(np.vdot(p, self.neg_laplacian(p))))
        rot = -self.omega * a * float(np.real(np.vdot(p, self.ang(p))))
        pot = a * float(np.sum(self.v * np.abs(p) ** 2)) / self.eps**2
        quart = a * float(np.sum(np.abs(p) ** 4)) / self.eps**2
        return {"kinetic": kin, "rotation": rot, "trap": pot, "interaction": quart,
                "total": kin + rot + pot + quart}

    def energy(self, p: np.ndarray) -> float:
        a = self.h**2
        lin = 0.5 * self.neg_laplacian(p) - self.omega * self.ang(p) + self.v * p / self.eps**2
        return a * float(np.real(np.vdot(p, lin)) + np.sum(np.abs(p) ** 4) / self.eps**2)

    def gradient(self, p: np.ndarray) -> np.ndarray:
        """Gradient with respect to (Re psi, Im psi), packed as a complex array."""
        return 2 * self.h**2 * self.hamiltonian(p)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.h**2 * float(np.real(np.vdot(a, b)))

    def normalize(self, p: np.ndarray) -> np.ndarray:
        return p / math.sqrt(self.inner(p, p))

    def precondition(self, r: np.ndarray) -> np.ndarray:
        den = 0.5 * self.lap_eig + self.c0

        def solve(a):
            return idstn(dstn(a, type=1) / den, type=1)

        wr = self.pre_w * r
        return self.pre_w * (solve(wr.real) + 1j * solve(wr.imag))


def seed_configuration(model: tfcore.TfModel, omega0: float, eps: float, n_extra: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Vortex positions used to imprint the initial phase.

    The lattice points come first; when the lattice is empty, the predicted
    number of vortices sits on a ring of radius R*/2. n_extra random points
    in the bulk are added on top.
    """
    import warnings

    pts = np.zeros((0, 2))
    r_bulk = 0.5 * model.r_tf
    if omega0 > tfcore.omega_c1(model):
        density = ms.mu_star(model, omega0)
        r_bulk = max(0.8 * density.r_star, 0.2 * model.r_tf)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", lat_mod.EmptyLatticeWarning)
            lat = lat_mod.build_lattice(model, omega0, eps, density=density)
        pts = lat.points
        if pts.shape[0] == 0:
            count = int(round(-math.log(eps) * density.total_mass / (2 * math.pi)))
            ang = 2 * math.pi * (np.arange(count) + 0.5) / max(count, 1)
            rad = 0.5 * density.r_star
            pts = np.column_stack((rad * np.cos(ang), rad * np.sin(ang)))
    extra = []
    while len(extra) < n_extra:
        p = rng.uniform(-r_bulk, r_bulk, 2)
        if np.hypot(*p) < r_bulk:
            extra.append(p)
    if extra:
        pts = np.vstack([pts, np.array(extra)])
    return pts


def initial_state(op: GpOperator, g2d: np.ndarray, points: np.ndarray, noise: float,
                  rng: np.random.Generator) -> np.ndarray:
    psi = g2d.astype(complex)
    for ax_, ay_ in points:
        dx, dy = op.x - ax_, op.y - ay_
        psi = psi * (dx + 1j * dy) / np.sqrt(dx**2 + dy**2 + op.eps**2)
    psi = psi + noise * g2d * (rng.standard_normal(g2d.shape) + 1j * rng.standard_normal(g2d.shape))
    return op.normalize(psi)


def _profile_on_grid(profile: RadialProfileG, op: GpOperator) -> np.ndarray:
    return profile.at(np.hypot(op.x, op.y))


def run_flow(op: GpOperator, psi: np.ndarray, max_iter: int, tol: float
             ) -> tuple[np.ndarray, list, bool, float, float, int]:
    """Preconditioned nonlinear conjugate gradient on the unit sphere.

    Directions are projected on the tangent space; every trial point is
    renormalized; the step comes from a quadratic model of the energy along
    the direction, with halving whenever the energy would go up.
    """
    psi = op.normalize(psi)
    e = op.energy(psi)
    trace = [e]
    d_old = r_old = z_old = None
    step = 1.0
    res = float("inf")
    mu = float("nan")
    it = 0
    for it in range(1, max_iter + 1):
        hp = op.hamiltonian(psi)
        mu = op.inner(psi, hp)
        r = hp - mu * psi
        res = math.sqrt(op.inner(r, r))
        if res <= tol * abs(mu):
            return psi, trace, True, res, mu, it - 1
        z = op.precondition(r)
        z -= op.inner(psi, z) * psi
        if d_old is None:
            d = -z
        else:
            beta = max(0.0, op.inner(r - r_old, z) / op.inner(r_old, z_old))
            d = -z + beta * d_old
            d -= op.inner(psi, d) * psi
            if op.inner(d, r) >= 0:
                d = -z
        slope = 2 * op.inner(r, d)
        a = step
        trial = op.normalize(psi + a * d)
        e_trial = op.energy(trial)
        curv = 2 * (e_trial - e - slope * a) / a**2
        if curv > 0:
            a2 = -slope / curv
            trial2 = op.normalize(psi + a2 * d)
            e2 = op.energy(trial2)
            if e2 < e_trial:
                a, trial, e_trial = a2, trial2, e2
        while e_trial > e + 1e-4 * a * slope and a > 1e-12:
            a *= 0.5
            trial = op.normalize(psi + a * d)
            e_trial = op.energy(trial)
        if e_trial > e:
            # no descent even for tiny steps: restart from steepest descent
            d_old = None
            step = 1.0
            trace.append(e)
            continue
        step = a
        psi, e = trial, e_trial
        trace.append(e)
        d_old, r_old, z_old = d, r, z
    return psi, trace, False, res, mu, it


def minimize_gp(eps: float, omega0: float, s: float = 2.0, grid: Grid2D | None = None,
                schedule: GpSchedule | None = None, profile: RadialProfileG | None = None
                ) -> GpState:
    """Lowest-energy state over a small set of seeded starts."""
    schedule = schedule or GpSchedule()
    grid = grid or default_grid(eps, s)
    op = GpOperator(grid, eps, omega0, s)
    model = tfcore.tf_model(s)
    if profile is None:
        profile = solve_radial_profile(eps, s, r_max=max(model.r_tf + 0.5, math.sqrt(2) * grid.extent + 0.05))
    g2d = _profile_on_grid(profile, op)
    best = None
    starts = []
    for j in range(schedule.n_starts):
        seed = schedule.seeds[j % len(schedule.seeds)] + 1000 * (j // len(schedule.seeds))
        rng = np.random.default_rng(seed)
        pts = seed_configuration(model, omega0, eps, schedule.extra_vortices * j, rng)
        psi0 = initial_state(op, g2d, pts, schedule.noise, rng)
        psi, trace, ok, res, mu, its = run_flow(op, psi0, schedule.max_iter, schedule.tol)
        full = np.zeros((grid.n, grid.n), dtype=complex)
        full[1:-1, 1:-1] = psi
        state = GpState(grid, full, eps, omega0, s, trace, ok, res, mu, its, seed)
        starts.append({"seed": seed, "seeded_vortices": int(pts.shape[0]), "energy": trace[-1],
                       "converged": ok, "iterations": its})
        if best is None or trace[-1] < best.energy:
            best = state
    best.starts = starts
    return best


def gradient_check(state: GpState, n_nodes: int = 20, seed: int = 0, step: float = 1e-3) -> float:
    """Max relative mismatch between the analytic gradient and finite differences.

    Central differences at step and step/2 are Richardson-combined, which
    keeps truncation below the summation roundoff of the energy.
    """
    op = GpOperator(state.grid, state.eps, state.omega0, state.s)
    psi = state.psi[1:-1, 1:-1].copy()
    grad = op.gradient(psi)
    rng = np.random.default_rng(seed)
    bulk = np.argwhere(np.abs(psi) > 0.1 * np.abs(psi).max())
    picks = bulk[rng.choice(len(bulk), size=n_nodes, replace=False)]

    def central(i, j, unit, d):
        p = psi.copy()
        p[i, j] += unit * d
        ep = op.energy(p)
        p[i, j] -= 2 * unit * d
        return (ep - op.energy(p)) / (2 * d)

    worst = 0.0
    for i, j in picks:
        for unit, comp in ((1.0, grad[i, j].real), (1j, grad[i, j].imag)):
            fd = (4 * central(i, j, unit, step / 2) - central(i, j, unit, step)) / 3
            worst = max(worst, abs(fd - comp) / max(abs(grad[i, j]), 1e-300))
    return worst


# ---------------------------------------------------------------------------
# energy decomposition and vorticity


@dataclass(frozen=True)
class EnergyReport:
    e_gp: float
    e_hat: float
    reduced: float
    identity_gap: float
    renormalized: float
    i_tf_target: float
    threshold_coverage: float
    terms: dict = field(default_factory=dict)

    @property
    def relative_gap(self) -> float:
        return abs(self.identity_gap) / abs(self.e_gp)


def g_threshold(eps: float, s: float) -> float:
    """Lower bound on g^2 for the region where u = psi/g is used."""
    return max(eps, 0.02 * tfcore.tf_model(s).lambda_tf)


def energy_decompose(state: GpState, profile: RadialProfileG) -> EnergyReport:
    """E[psi] versus E_hat[g] + reduced energy of u = psi/g, on the state's grid.

    E_hat is evaluated with the same discrete operators on the profile
    sampled at the grid nodes. The reduced energy uses the edge form
    g_i g_j |u_j - u_i|^2 for the kinetic part, the current of u for the
    rotation part and g^4 (1 - |u|^2)^2 for the interaction part.
    """
    import warnings

    if abs(profile.eps - state.eps) > 1e-15 or profile.s != state.s:
        raise ValueError("profile and state must share eps and s")
    op = GpOperator(state.grid, state.eps, state.omega0, state.s)
    psi = state.psi[1:-1, 1:-1]
    g = _profile_on_grid(profile, op)
    a = op.h**2
    e_gp = op.energy(psi)
    e_hat = (0.5 * a * float(np.sum(g * op.neg_laplacian(g)))
             + a * float(np.sum(op.v * g**2 + g**4)) / op.eps**2)
    tiny = 1e-300
    u = psi / np.maximum(g, tiny)
    gp = op._pad(g)
    up = op._pad(u)
    kin = 0.0
    for sl_a, sl_b in (((slice(1, None), slice(None)), (slice(None, -1), slice(None))),
                       ((slice(None), slice(1, None)), (slice(None), slice(None, -1)))):
        ga, gb = gp[sl_a], gp[sl_b]
        ua, ub = up[sl_a], up[sl_b]
        kin += 0.5 * float(np.sum(ga * gb * np.abs(ua - ub) ** 2))
    jx = np.imag(np.conj(u) * op.dx(u))
    jy = np.imag(np.conj(u) * op.dy(u))
    rot = -op.omega * a * float(np.sum(g**2 * (op.x * jy - op.y * jx)))
    quart = a * float(np.sum(g**4 * (1 - np.abs(u) ** 2) ** 2)) / op.eps**2
    reduced = kin + rot + quart
    thr = g_threshold(state.eps, state.s)
    model = tfcore.tf_model(state.s)
    in_tf = np.hypot(op.x, op.y) < model.r_tf
    coverage = float(np.mean((g**2 >= thr)[in_tf]))
    if coverage < 0.9:
        warnings.warn(f"g^2 >= threshold covers only {coverage:.1%} of the TF disc", stacklevel=2)
    log_eps = -math.log(state.eps)
    target = float("nan")
    if state.omega0 > tfcore.omega_c1(model):
        target = ms.mu_star(model, state.omega0).i_tf
    else:
        target = 0.0
    return EnergyReport(e_gp, e_hat, reduced, e_gp - e_hat - reduced, reduced / log_eps**2,
                        target, coverage, {"kinetic": kin, "rotation": rot, "interaction": quart})


@dataclass
class VorticityResult:
    mu_field: np.ndarray | None
    vortices: list
    radial_r: np.ndarray
    radial_mu: np.ndarray
    mask: np.ndarray | None = None
    norm_gap: float = float("nan")
    excluded_fraction: float = 0.0
    total_winding: int = 0
    grid: Grid2D | None = None


def plaquette_winding(psi: np.ndarray) -> np.ndarray:
    """Winding number of the phase around each grid cell (integers)."""
    ph = np.angle(psi)

    def wrap(d):
        return (d + np.pi) % (2 * np.pi) - np.pi

    w = (wrap(ph[1:, :-1] - ph[:-1, :-1]) + wrap(ph[1:, 1:] - ph[1:, :-1])
         + wrap(ph[:-1, 1:] - ph[1:, 1:]) + wrap(ph[:-1, :-1] - ph[:-1, 1:]))
    return np.rint(w / (2 * np.pi)).astype(int)


def cluster_vortices(cells: np.ndarray, windings: np.ndarray, xc: np.ndarray, yc: np.ndarray,
                     reach: int = 2) -> list[tuple[float, float, int]]:
    """Merge flagged cells within `reach` cells of each other (winding-weighted centroid)."""
    remaining = list(range(len(cells)))
    out = []
    while remaining:
        group = [remaining.pop(0)]
        grew = True
        while grew:
            grew = False
            for k in list(remaining):
                if any(np.max(np.abs(cells[k] - cells[g])) <= reach for g in group):
                    group.append(k)
                    remaining.remove(k)
                    grew = True
        w = windings[group].astype(float)
        wt = np.abs(w)
        ii, jj = cells[group, 0], cells[group, 1]
        x = float(np.sum(wt * xc[ii]) / wt.sum())
        y = float(np.sum(wt * yc[jj]) / wt.sum())
        out.append((x, y, int(w.sum())))
    return out


def extract_vorticity(state: GpState, profile: RadialProfileG, bin_width: float | None = None
                      ) -> VorticityResult:
    op = GpOperator(state.grid, state.eps, state.omega0, state.s)
    model = tfcore.tf_model(state.s)
    psi = state.psi[1:-1, 1:-1]
    g = _profile_on_grid(profile, op)
    thr = g_threshold(state.eps, state.s)
    mask = g**2 >= thr
    u = np.where(mask, psi / np.where(mask, g, 1.0), 0.0)
    jx = np.imag(np.conj(u) * op.dx(u))
    jy = np.imag(np.conj(u) * op.dy(u))
    curl = op.dx(jy.astype(complex)).real - op.dy(jx.astype(complex)).real
    # a centered difference reaching an excluded node is not trusted
    inner = mask.copy()
    inner[1:, :] &= mask[:-1, :]
    inner[:-1, :] &= mask[1:, :]
    inner[:, 1:] &= mask[:, :-1]
    inner[:, :-1] &= mask[:, 1:]
    log_eps = -math.log(state.eps)
    mu = np.where(inner, curl / log_eps, 0.0)

    full = state.psi
    w = plaquette_winding(full)
    ax = state.grid.axis
    xc = 0.5 * (ax[1:] + ax[:-1])
    gfull = profile.at(np.hypot(*np.meshgrid(xc, xc, indexing="ij")))
    cell_mask = gfull**2 >= thr
    flagged = np.argwhere((np.abs(w) >= 1) & cell_mask)
    vortices = cluster_vortices(flagged, w[flagged[:, 0], flagged[:, 1]], xc, xc) if len(flagged) else []

    bin_width = model.r_tf / 32 if bin_width is None else bin_width
    r = np.hypot(op.x, op.y)
    edges = np.arange(0.0, model.r_tf + bin_width, bin_width)
    centers = 0.5 * (edges[1:] + edges[:-1])
    which = np.digitize(r, edges) - 1
    radial = np.full(centers.size, np.nan)
    for k in range(centers.size):
        sel = (which == k) & inner
        ring = which == k
        if ring.any() and sel.sum() >= 0.5 * ring.sum():
            radial[k] = float(np.sum(mu[sel]) / ring.sum())
    in_tf = r < model.r_tf
    excluded = float(np.mean(~inner[in_tf]))
    total = int(sum(v[2] for v in vortices))
    return VorticityResult(mu, vortices, centers, radial, inner, float("nan"), excluded, total,
                           state.grid)


def bulk_radius(model: tfcore.TfModel, omega: float, c_bulk: float | None = None) -> float:
    c_bulk = 0.25 / model.r_tf if c_bulk is None else c_bulk
    return model.r_tf - c_bulk / omega


def compare_to_mustar(result: VorticityResult, density: ms.VortexDensity, eps: float,
                      n_nodes: int = 1024) -> float:
    """sqrt of int (1/2rho)|grad h_D|^2 on B(R_bulk), D = radial_mu - mu*."""
    model = tfcore.tf_model(density.s)
    omega = density.omega0 * -math.log(eps)
    r_bulk = bulk_radius(model, omega)
    grid = tfcore.radial_grid(r_bulk, n_nodes)
    ok = np.isfinite(result.radial_mu)
    if not ok.any():
        raise ValueError("no usable radial vorticity samples")
    rr = np.concatenate(([0.0], result.radial_r[ok]))
    mm = np.concatenate(([result.radial_mu[ok][0]], result.radial_mu[ok]))
    avg = np.interp(grid, rr, mm, right=0.0)
    ref = density.density_at(grid)
    diff = renorm.RadialMeasure(grid, avg - ref, r_bulk)
    gap = math.sqrt(max(renorm.energy(diff, model, 0.0).interaction, 0.0))
    result.norm_gap = gap
    return gap


def radial_result(r: np.ndarray, values: np.ndarray) -> VorticityResult:
    return VorticityResult(None, [], np.asarray(r, float), np.asarray(values, float))


def vorticity_from_lattice(lattice: lat_mod.VortexLattice, model: tfcore.TfModel,
                           bin_width: float | None = None) -> VorticityResult:
    """Radially binned 2 pi sum delta_{a_i} / |log eps| of a lattice."""
    bin_width = model.r_tf / 32 if bin_width is None else bin_width
    edges = np.arange(0.0, model.r_tf + bin_width, bin_width)
    centers = 0.5 * (edges[1:] + edges[:-1])
    radii = np.hypot(lattice.points[:, 0], lattice.points[:, 1])
    counts, _ = np.histogram(radii, bins=edges)
    area = np.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
    return radial_result(centers, 2 * np.pi * counts / (area * lattice.log_eps))


# ---------------------------------------------------------------------------
# export


def write_state_binary(state: GpState, path) -> None:
    with open(path, "wb") as fh:
        write_block(fh, state.grid, state.psi.real)
        write_block(fh, state.grid, state.psi.imag)


def read_state_binary(path) -> tuple[Grid2D, np.ndarray]:
    with open(path, "rb") as fh:
        grid, re = read_block(fh)
        _, im = read_block(fh)
    return grid, re + 1j * im


def write_vortices_csv(result: VorticityResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "winding"])
        for x, y, k in result.vortices:
            w.writerow([repr(float(x)), repr(float(y)), int(k)])


def read_vortices_csv(path) -> list[tuple[float, float, int]]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [(float(r["x"]), float(r["y"]), int(r["winding"])) for r in rows]


def write_radial_csv(result: VorticityResult, density: ms.VortexDensity, path) -> None:
    ref = density.density_at(result.radial_r)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "mu_avg", "mu_star"])
        for r, a, b in zip(result.radial_r, result.radial_mu, ref):
            w.writerow([repr(float(r)), repr(float(a)), repr(float(b))])


def read_radial_csv(path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.asarray(data[name], dtype=float) for name in data.dtype.names}
