"""Weighted elliptic solves -div(rho^-1 grad h) = f on a disc, on a Cartesian grid.

Nodes strictly inside the disc are unknowns; every other node is a zero
Dirichlet value (staircase boundary). The five-point finite-volume stencil
uses the arithmetic mean of the nodal 1/rho on each face, which keeps the
matrix symmetric positive definite and an M-matrix.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator

from . import lattice as lat_mod
from . import renorm
from . import tfcore
from .tfcore import TfModel

RHO_FLOOR = 1e-3


class SolverNotConverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class ResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Grid2D:
    n: int
    extent: float

    def __post_init__(self):
        if self.n < 65:
            raise ValueError("grid needs at least 65 nodes per side")
        if self.extent <= 0:
            raise ValueError("extent must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / (self.n - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    def radius(self) -> np.ndarray:
        x, y = self.mesh()
        return np.hypot(x, y)


@dataclass(frozen=True)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray
    mask: np.ndarray | None = None
    history: list = field(default_factory=list, compare=False)

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.spacing**2)

    def interpolator(self) -> RegularGridInterpolator:
        ax = self.grid.axis
        return RegularGridInterpolator((ax, ax), self.values, method="linear")

    def at(self, points) -> np.ndarray:
        return self.interpolator()(np.atleast_2d(points))


@dataclass(frozen=True)
class DiscDomain:
    r_inner: float
    r_outer: float


def disc_domain(model: TfModel, eps: float) -> DiscDomain:
    log_eps = -np.log(eps)
    r_in = model.r_tf - eps ** (2 / 3) * log_eps ** (2 / 3)
    r_out = model.r_tf + eps ** (2 / 3) * log_eps ** (4 / 3)
    return DiscDomain(r_in, r_out)


class _DiscOperator:
    def __init__(self, grid: Grid2D, model: TfModel, disc_radius: float):
        if disc_radius >= model.r_tf:
            raise ValueError("disc must lie strictly inside the Thomas-Fermi support")
        self.grid = grid
        self.disc_radius = disc_radius
        r = grid.radius()
        self.mask = r < disc_radius
        rho = np.asarray(tfcore.rho_tf(model, np.minimum(r, disc_radius + 2 * grid.spacing)))
        if rho[self.mask].min() < RHO_FLOOR:
            raise ValueError("density falls below the floor inside the disc")
        inv = 1.0 / np.maximum(rho, RHO_FLOOR)
        n = grid.n
        idx = -np.ones((n, n), dtype=np.int64)
        idx[self.mask] = np.arange(int(self.mask.sum()))
        self.idx = idx
        h2 = grid.spacing**2
        rows, cols, vals = [], [], []
        diag = np.zeros(int(self.mask.sum()))
        ii, jj = np.nonzero(self.mask)
        me = idx[ii, jj]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = ii + di, jj + dj
            coef = 0.5 * (inv[ii, jj] + inv[ni, nj]) / h2
            diag += coef
            other = idx[ni, nj]
            inside = other >= 0
            rows.append(me[inside])
            cols.append(other[inside])
            vals.append(-coef[inside])
        rows.append(me)
        cols.append(me)
        vals.append(diag)
        size = diag.size
        self.matrix = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
        self.inv_diag = 1.0 / diag

    def pcg(self, b: np.ndarray, tol: float, max_iter: int, x0: np.ndarray | None = None):
        a = self.matrix
        x = np.zeros_like(b) if x0 is None else x0.copy()
        r = b - a @ x
        bnorm = np.linalg.norm(b)
        history = []
        if bnorm == 0.0:
            return np.zeros_like(b), [0.0]
        z = self.inv_diag * r
        p = z.copy()
        rz = r @ z
        for _ in range(max_iter):
            rel = np.linalg.norm(r) / bnorm
            history.append(float(rel))
            if rel <= tol:
                return x, history
            ap = a @ p
            alpha = rz / (p @ ap)
            x += alpha * p
            r -= alpha * ap
            z = self.inv_diag * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        rel = np.linalg.norm(r) / bnorm
        history.append(float(rel))
        if rel <= tol:
            return x, history
        raise SolverNotConverged(f"PCG stalled at relative residual {rel:.3e}", history)


@lru_cache(maxsize=8)
def _operator(n: int, extent: float, s: float, disc_radius: float) -> _DiscOperator:
    return _DiscOperator(Grid2D(n, extent), tfcore.tf_model(s), disc_radius)


def solve_weighted_poisson(source: ScalarField2D, model: TfModel, disc_radius: float,
                           tol: float = 1e-9, max_iter: int | None = None) -> ScalarField2D:
    grid = source.grid
    op = _operator(grid.n, grid.extent, model.s, float(disc_radius))
    outside = ~op.mask & (source.values != 0)
    if np.any(outside):
        raise ValueError("source has support outside the working disc")
    b = source.values[op.mask]
    x, hist = op.pcg(b, tol, max_iter or 20 * grid.n)
    vals = np.zeros((grid.n, grid.n))
    vals[op.mask] = x
    return ScalarField2D(grid, vals, op.mask, hist)


def dirichlet_energy(h: ScalarField2D, source: ScalarField2D) -> float:
    """int (1/2 rho)|grad h|^2, evaluated exactly as (1/2) int h f for the discrete solution."""
    return 0.5 * float(np.sum(h.values * source.values)) * h.grid.spacing**2


def smoothed_delta(grid: Grid2D, center, radius: float, subsamples: int = 6) -> ScalarField2D:
    """Unit-mass ball profile (1/(pi r^2)) 1_{B(center, r)} as cell averages."""
    if 2 * radius / grid.spacing < 6:
        warnings.warn(f"smoothing radius {radius:g} spans fewer than 6 cells", ResolutionWarning,
                      stacklevel=2)
    ax = grid.axis
    vals = lat_mod.ball_cell_average(np.asarray(center, dtype=float)[None, :], radius,
                                     1.0 / (np.pi * radius**2), ax, ax, subsamples)
    return ScalarField2D(grid, vals)


def green_function(model: TfModel, grid: Grid2D, y, disc_radius: float, smoothing: float,
                   tol: float = 1e-9) -> ScalarField2D:
    return solve_weighted_poisson(smoothed_delta(grid, y, smoothing), model, disc_radius, tol)


@dataclass(frozen=True)
class GreenCheck:
    sup_coarse: float
    sup_fine: float
    relative_change: float
    stable: bool
    min_green: float
    symmetry_error: float
    n_pairs: int
    grids: tuple[int, int]


def _sample_pairs(disc_radius: float, n_sources: int, per_source: int, min_dist: float, seed: int):
    rng = np.random.default_rng(seed)
    inner = 0.85 * disc_radius

    def draw():
        while True:
            p = rng.uniform(-inner, inner, 2)
            if np.hypot(*p) < inner:
                return p

    sources = [draw() for _ in range(n_sources)]
    pairs = []
    for y in sources:
        count = 0
        while count < per_source:
            x = draw()
            if np.hypot(*(x - y)) >= min_dist:
                pairs.append((x, y))
                count += 1
    return np.array(sources), pairs


def green_singularity_check(model: TfModel, disc_radius: float | None = None,
                            sample_pairs: int = 50, n: int = 513, n_sources: int = 5,
                            seed: int = 0, tol: float = 1e-9) -> GreenCheck:
    """sup |G(x,y) + rho(y) log|x-y| / 2pi| over random pairs, on n and 2n-1 grids.

    Pairs share a handful of source points y so that each grid needs only
    n_sources solves. The delta is smoothed over a ball of three coarse
    spacings, kept fixed under refinement.
    """
    if disc_radius is None:
        disc_radius = disc_domain(model, 0.01).r_inner
    per_source = int(np.ceil(sample_pairs / n_sources))
    extent = model.r_tf
    coarse = Grid2D(n, extent)
    fine = Grid2D(2 * n - 1, extent)
    smoothing = 3.0 * coarse.spacing
    sources, pairs = _sample_pairs(disc_radius, n_sources, per_source, 4 * coarse.spacing, seed)
    pairs = pairs[:sample_pairs]
    sups, mins = [], []
    sym = 0.0
    for grid in (coarse, fine):
        fields = [green_function(model, grid, y, disc_radius, smoothing, tol) for y in sources]
        dev = 0.0
        g_min = np.inf
        for x, y in pairs:
            k = int(np.argmin(np.hypot(*(sources - y).T)))
            g = float(fields[k].at(x)[0])
            rho_y = float(tfcore.rho_tf(model, np.hypot(*y)))
            dev = max(dev, abs(g + rho_y * np.log(np.hypot(*(x - y))) / (2 * np.pi)))
            g_min = min(g_min, g)
        sups.append(dev)
        mins.append(g_min)
        if grid is fine:
            for a in range(n_sources):
                for b in range(a + 1, n_sources):
                    gab = float(fields[a].at(sources[b])[0])
                    gba = float(fields[b].at(sources[a])[0])
                    sym = max(sym, abs(gab - gba) / max(abs(gab), abs(gba)))
    change = abs(sups[1] - sups[0]) / sups[0]
    return GreenCheck(sups[0], sups[1], change, change <= 0.2, min(mins), sym, len(pairs),
                      (coarse.n, fine.n))


@dataclass(frozen=True)
class InteractionReport:
    total: float
    per_vortex_cost: float
    interaction: float
    self_energies: tuple[float, ...]


def trial_interaction_energy(lattice: lat_mod.VortexLattice, model: TfModel, grid: Grid2D,
                             disc_radius: float | None = None, tol: float = 1e-9
                             ) -> InteractionReport:
    """int (1/2rho)|grad h|^2 for the trial measure, split into self and pair parts."""
    if lattice.n_total == 0:
        return InteractionReport(0.0, 0.0, 0.0, ())
    if 2 * lattice.eps / grid.spacing < 6:
        raise ValueError("vortex balls need at least 6 cells across")
    if disc_radius is None:
        disc_radius = disc_domain(model, lattice.eps).r_inner
    trial = lat_mod.trial_measure(lattice)
    ax = grid.axis
    src = ScalarField2D(grid, trial.sample(ax, ax))
    total = dirichlet_energy(solve_weighted_poisson(src, model, disc_radius, tol), src)
    selfs = []
    for p in lattice.points:
        one = ScalarField2D(grid, lat_mod.ball_cell_average(p[None, :], trial.ball_radius,
                                                            trial.amplitude, ax, ax))
        selfs.append(dirichlet_energy(solve_weighted_poisson(one, model, disc_radius, tol), one))
    diag = float(np.sum(selfs))
    return InteractionReport(total, diag, total - diag, tuple(selfs))


@dataclass(frozen=True)
class UpperBound:
    estimate: float
    ratio: float
    cost_term: float
    interaction_term: float
    i_tf: float
    trial_estimate: float | None = None


def upper_bound_energy(lattice: lat_mod.VortexLattice, model: TfModel, omega0: float,
                       grid: Grid2D | None = None, n_radial: int = 4096) -> UpperBound:
    """2 pi L sum H(a_i) + L^2 * (1/2) int int G mu* mu*, and its ratio to I L^2.

    The double integral carries the factor 1/2 of the energy density
    1/(2 rho)|grad h|^2, so it equals the radial interaction term of mu*.
    With a grid, the trial measure's own interaction energy plus
    2 pi L sum F(a_i) is reported as trial_estimate.
    """
    density = lattice.density
    if omega0 <= tfcore.omega_c1(model) or density is None or density.total_mass == 0:
        return UpperBound(0.0, float("nan"), 0.0, 0.0, 0.0, 0.0 if grid is not None else None)
    log_eps = lattice.log_eps
    radii = np.hypot(lattice.points[:, 0], lattice.points[:, 1]) if lattice.n_total else np.zeros(0)
    cost = 2 * np.pi * log_eps * float(np.sum(tfcore.h_tf(model, omega0, radii)))
    nu = renorm.from_density(density, tfcore.radial_grid(density.r_dom, n_radial))
    inter = renorm.energy(nu, model, 0.0).interaction
    estimate = cost + log_eps**2 * inter
    trial = None
    if grid is not None and lattice.n_total:
        rep = trial_interaction_energy(lattice, model, grid)
        trial = rep.total + 2 * np.pi * log_eps * float(np.sum(tfcore.f_tf(model, omega0, radii)))
    return UpperBound(estimate, estimate / (density.i_tf * log_eps**2), cost,
                      log_eps**2 * inter, density.i_tf, trial)


def write_field_csv(field_: ScalarField2D, path) -> None:
    x, y = field_.grid.mesh()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value"])
        for a, b, v in zip(x.ravel(), y.ravel(), field_.values.ravel()):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(v))])


def read_field_csv(path) -> ScalarField2D:
    data = np.genfromtxt(path, delimiter=",", names=True)
    n = int(round(np.sqrt(data.size)))
    extent = float(np.max(data["x"]))
    return ScalarField2D(Grid2D(n, extent), np.asarray(data["value"]).reshape(n, n))


def write_block(fh, grid: Grid2D, values: np.ndarray) -> None:
    """Header (n, extent) as little-endian doubles, then row-major doubles."""
    fh.write(struct.pack("<dd", float(grid.n), float(grid.extent)))
    fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_block(fh) -> tuple[Grid2D, np.ndarray]:
    head = fh.read(16)
    if len(head) < 16:
        raise EOFError("truncated block header")
    n_f, extent = struct.unpack("<dd", head)
    n = int(n_f)
    raw = fh.read(8 * n * n)
    if len(raw) < 8 * n * n:
        raise EOFError("truncated block data")
    return Grid2D(n, extent), np.frombuffer(raw, dtype="<f8").reshape(n, n).copy()


def write_field_binary(field_: ScalarField2D, path) -> None:
    with open(path, "wb") as fh:
        write_block(fh, field_.grid, field_.values)


def read_field_binary(path) -> ScalarField2D:
    with open(path, "rb") as fh:
        grid, vals = read_block(fh)
    return ScalarField2D(grid, vals)


def radial_source(grid: Grid2D, fn) -> ScalarField2D:
    return ScalarField2D(grid, fn(grid.radius()))
