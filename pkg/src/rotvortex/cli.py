"""Command-line entry point: `rotvortex <command> [options]`.

Options may also come from a key=value file given by --config. Values on the
command line win over the file, which wins over built-in defaults. Outputs go
to --out, else $ROTVORTEX_OUT, else ./rotvortex-out.

Exit codes: 0 success, 2 invalid configuration, 3 no convergence, 4 missing input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import field2d, gpflow, lattice, mustar, renorm, tfcore

OUT_ENV = "ROTVORTEX_OUT"


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(message)
        self.field = field_name


class MissingInput(FileNotFoundError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration

DEFAULTS = {
    "common": {"s": 2.0, "omega0": "2x-crit", "seed": 0, "out": None},
    "tf": {"n_nodes": 2048},
    "mustar": {"n_nodes": 2048, "support": "minimizer"},
    "renorm-min": {"n_nodes": 2048, "init": "zero", "max_iter": 50000, "tol": 1e-10,
                   "accelerate": True},
    "lattice": {"eps": "0.01", "k0": None},
    "green": {"n": 257, "pairs": 50, "sources": 5, "tol": 1e-9},
    "gp": {"eps": "0.05", "grid_n": 256, "max_iter": 6000, "tol": 1e-6, "starts": 3},
    "compare": {"gp_dir": None, "mustar_dir": None},
}

CONVERTERS = {
    "s": float, "seed": int, "n_nodes": int, "max_iter": int, "tol": float, "n": int,
    "pairs": int, "sources": int, "grid_n": int, "starts": int,
    "k0": lambda v: None if v in (None, "", "none") else int(v),
}


def parse_omega0(value, s: float) -> float:
    """A number, or '<k>x-crit' meaning k times the first critical velocity."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    if text.endswith("x-crit"):
        k = float(text[: -len("x-crit")])
        return k * tfcore.omega_c1(tfcore.tf_model(s))
    return float(text)


def parse_eps_list(value) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(v) for v in str(value).split(",") if v.strip()]


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def read_config_file(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError as exc:
        raise MissingInput(f"config file not found: {path}") from exc
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{num}: expected key=value")
        key, val = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def resolve_config(command: str, cli_values: dict) -> dict:
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[command])
    if cli_values.get("config"):
        file_vals = read_config_file(cli_values["config"])
        unknown = set(file_vals) - set(cfg)
        if unknown:
            raise ConfigError(sorted(unknown)[0], f"unknown key for '{command}'")
        cfg.update(file_vals)
    cfg.update({k: v for k, v in cli_values.items() if v is not None and k != "config"})
    for key, conv in CONVERTERS.items():
        if key in cfg and cfg[key] is not None:
            try:
                cfg[key] = conv(cfg[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"cannot parse {cfg[key]!r}") from exc
    if "accelerate" in cfg:
        try:
            cfg["accelerate"] = parse_bool(cfg["accelerate"])
        except ValueError as exc:
            raise ConfigError("accelerate", str(exc)) from exc
    validate(command, cfg)
    return cfg


def validate(command: str, cfg: dict) -> None:
    if not math.isfinite(cfg["s"]) or cfg["s"] < 2:
        raise ConfigError("s", "trap exponent s must be >= 2")
    try:
        cfg["omega0"] = parse_omega0(cfg["omega0"], cfg["s"])
    except ValueError as exc:
        raise ConfigError("omega0", f"cannot parse {cfg['omega0']!r}") from exc
    if not cfg["omega0"] > 0:
        raise ConfigError("omega0", "omega0 must be positive")
    if "n_nodes" in cfg:
        floor_ = 256 if command != "tf" else 16
        if cfg["n_nodes"] < floor_:
            raise ConfigError("n_nodes", f"need at least {floor_} radial nodes")
    if "eps" in cfg:
        try:
            cfg["eps"] = parse_eps_list(cfg["eps"])
        except ValueError as exc:
            raise ConfigError("eps", f"cannot parse {cfg['eps']!r}") from exc
        upper = 0.2 if command == "gp" else math.exp(-1)
        if not cfg["eps"] or any(not 0 < e < upper for e in cfg["eps"]):
            raise ConfigError("eps", f"every eps must lie in (0, {upper:.4g})")
    if command == "mustar" and cfg["support"] not in ("minimizer", "sublevel"):
        raise ConfigError("support", "support must be 'minimizer' or 'sublevel'")
    if command == "renorm-min" and cfg["init"] not in ("zero", "random", "mustar"):
        raise ConfigError("init", "init must be one of zero, random, mustar")
    if command == "green" and cfg["n"] < 65:
        raise ConfigError("n", "grid needs at least 65 nodes per side")
    if command == "gp":
        if cfg["grid_n"] < 65:
            raise ConfigError("grid_n", "grid needs at least 65 nodes per side")
        if cfg["starts"] < 1:
            raise ConfigError("starts", "need at least one start")
    for key in ("max_iter", "pairs", "sources"):
        if key in cfg and cfg[key] < 1:
            raise ConfigError(key, f"{key} must be positive")
    if "tol" in cfg and not cfg["tol"] > 0:
        raise ConfigError("tol", "tol must be positive")


# ---------------------------------------------------------------------------
# output helpers


def output_root(cfg: dict) -> Path:
    root = cfg.get("out") or os.environ.get(OUT_ENV) or "rotvortex-out"
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects produced files and stage timings, then writes the manifest."""

    def __init__(self, command: str, cfg: dict, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = time.perf_counter() - self.t0
                return False

        return _Timer()

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def write_manifest(self) -> Path:
        echo = {k: v for k, v in self.cfg.items() if k != "out"}
        manifest = {
            "command": self.command,
            "config": echo,
            "version": __version__,
            "timings": self.timings,
            "files": {str(p.relative_to(self.out)): sha256(p) for p in sorted(set(self.files))},
        }
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=".manifest-", suffix=".json")
        with os.fdopen(fd, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        target = self.out / f"manifest-{self.command}.json"
        os.replace(tmp, target)
        return target


# ---------------------------------------------------------------------------
# commands


def cmd_tf(cfg: dict, run: Run) -> dict:
    with run.stage("tf"):
        model = tfcore.tf_model(cfg["s"])
        prof = tfcore.cost_profile(model, cfg["omega0"], cfg["n_nodes"])
    tfcore.write_profile_csv(prof, run.path("tf_profile.csv"))
    summary = {"s": model.s, "omega0": cfg["omega0"], "lambda_tf": model.lambda_tf,
               "r_tf": model.r_tf, "etf_coeff": model.etf_coeff, "omega1": prof.omega1}
    dump_json(summary, run.path("tf_summary.json"))
    return summary


def cmd_mustar(cfg: dict, run: Run) -> dict:
    model = tfcore.tf_model(cfg["s"])
    if cfg["omega0"] <= tfcore.omega_c1(model):
        raise ConfigError("omega0", "omega0 must exceed the first critical value for nucleation")
    with run.stage("mustar"):
        dens = mustar.mu_star(model, cfg["omega0"], cfg["n_nodes"], support=cfg["support"])
    mustar.write_density_csv(dens, run.path("mustar_density.csv"))
    summary = dens.summary(model)
    summary.update({"r1_over_r": dens.r1 / model.r_tf, "r2_over_r": dens.r2 / model.r_tf,
                    "r_star_over_r": dens.r_star / model.r_tf, "support": dens.support})
    if model.s == 2:
        c1, c2 = mustar.harmonic_closed_forms(model, cfg["omega0"])
        summary.update({"closed_form_r1_over_r": c1, "closed_form_r2_over_r": c2})
    dump_json(summary, run.path("mustar_summary.json"))
    return summary


def cmd_renorm_min(cfg: dict, run: Run) -> dict:
    model = tfcore.tf_model(cfg["s"])
    omega0 = cfg["omega0"]
    n = cfg["n_nodes"]
    init = renorm.zero_measure(model, n)
    if cfg["init"] == "random":
        rng = np.random.default_rng(cfg["seed"])
        init = renorm.RadialMeasure(init.grid, rng.uniform(-5.0, 10.0, n), init.r_dom)
    elif cfg["init"] == "mustar" and omega0 > tfcore.omega_c1(model):
        init = renorm.from_density(mustar.mu_star(model, omega0, n))
    with run.stage("minimize"):
        nu, report = renorm.minimize(model, omega0, init, max_iter=cfg["max_iter"],
                                     tol=cfg["tol"], accelerate=cfg["accelerate"])
    extra = {"omega0": omega0, "s": model.s, "init": cfg["init"], "mass": nu.mass()}
    if omega0 > tfcore.omega_c1(model):
        ref = mustar.mu_star(model, omega0, n)
        extra.update({"i_tf": ref.i_tf, "total_mass_star": ref.total_mass,
                      "l1_gap": renorm.weighted_l1(nu, renorm.from_density(ref, nu.grid)),
                      "l1_gap_fraction": renorm.weighted_l1(nu, renorm.from_density(ref, nu.grid))
                      / ref.total_mass})
    pot = renorm.solve_potential(nu, model)
    renorm.write_measure_csv(nu, pot, run.path("renorm_measure.csv"))
    renorm.write_report_json(report, run.path("renorm_report.json"), extra)
    if not report.converged:
        raise ConvergenceFailure(f"proximal gradient stopped after {report.iterations} iterations")
    return {**report.as_dict(), **extra}


def _eps_dir(eps: float, many: bool) -> str:
    return f"eps_{eps:g}/" if many else ""


def cmd_lattice(cfg: dict, run: Run) -> dict:
    model = tfcore.tf_model(cfg["s"])
    many = len(cfg["eps"]) > 1
    out = {}
    dens = mustar.mu_star(model, cfg["omega0"]) if cfg["omega0"] > tfcore.omega_c1(model) else None
    for eps in cfg["eps"]:
        with run.stage(f"lattice eps={eps:g}"), warnings.catch_warnings():
            warnings.simplefilter("ignore", lattice.EmptyLatticeWarning)
            lat = lattice.build_lattice(model, cfg["omega0"], eps, cfg["k0"], density=dens)
        pre = _eps_dir(eps, many)
        lattice.write_points_csv(lat, run.path(pre + "lattice_points.csv"))
        summ = lat.summary()
        summ["circles"] = [{k: (float(v) if k == "rho_k" else v) for k, v in c.items()}
                           for c in summ["circles"]]
        d, c, gap = lattice.riemann_check(lat, lambda r: np.ones_like(np.asarray(r, float)), model)
        summ["riemann_mass"] = {"discrete": d, "continuum": c, "error": gap}
        dump_json(summ, run.path(pre + "lattice_summary.json"))
        out[f"{eps:g}"] = summ
    return out


def cmd_green(cfg: dict, run: Run) -> dict:
    model = tfcore.tf_model(cfg["s"])
    with run.stage("green"):
        chk = field2d.green_singularity_check(model, sample_pairs=cfg["pairs"], n=cfg["n"],
                                              n_sources=cfg["sources"], seed=cfg["seed"],
                                              tol=cfg["tol"])
    summary = {"sup_coarse": chk.sup_coarse, "sup_fine": chk.sup_fine,
               "relative_change": chk.relative_change, "stable": chk.stable,
               "min_green": chk.min_green, "symmetry_error": chk.symmetry_error,
               "n_pairs": chk.n_pairs, "grids": list(chk.grids)}
    dump_json(summary, run.path("green_check.json"))
    return summary


def _write_density_samples(state: gpflow.GpState, path, stride: int) -> None:
    ax = state.grid.axis[::stride]
    dens = np.abs(state.psi[::stride, ::stride]) ** 2
    with open(path, "w") as fh:
        fh.write("x,y,density\n")
        for i, x in enumerate(ax):
            for j, y in enumerate(ax):
                fh.write(f"{x!r},{y!r},{float(dens[i, j])!r}\n")


def cmd_gp(cfg: dict, run: Run) -> dict:
    model = tfcore.tf_model(cfg["s"])
    many = len(cfg["eps"]) > 1
    out = {}
    for eps in cfg["eps"]:
        pre = _eps_dir(eps, many)
        grid = gpflow.default_grid(eps, model.s, cfg["grid_n"])
        if grid.spacing > eps / 2:
            raise ConfigError("grid_n", f"spacing {grid.spacing:.4g} exceeds eps/2 at eps={eps:g}")
        seeds = tuple(cfg["seed"] + k for k in range(cfg["starts"]))
        sched = gpflow.GpSchedule(max_iter=cfg["max_iter"], tol=cfg["tol"],
                                  n_starts=cfg["starts"], seeds=seeds)
        with run.stage(f"profile eps={eps:g}"):
            prof = gpflow.solve_radial_profile(
                eps, model.s, r_max=max(model.r_tf + 0.5, math.sqrt(2) * grid.extent + 0.05))
        with run.stage(f"minimize eps={eps:g}"):
            state = gpflow.minimize_gp(eps, cfg["omega0"], model.s, grid, sched, prof)
        with run.stage(f"analysis eps={eps:g}"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = gpflow.energy_decompose(state, prof)
            vort = gpflow.extract_vorticity(state, prof)
        dens = mustar.mu_star(model, cfg["omega0"])
        if dens.total_mass > 0:
            gpflow.compare_to_mustar(vort, dens, eps)
        gpflow.write_state_binary(state, run.path(pre + "gp_state.bin"))
        gpflow.write_vortices_csv(vort, run.path(pre + "gp_vortices.csv"))
        gpflow.write_radial_csv(vort, dens, run.path(pre + "gp_radial.csv"))
        stride = max(1, grid.n // 128)
        _write_density_samples(state, run.path(pre + "plot_density.csv"), stride)
        summary = {
            "eps": eps, "omega0": cfg["omega0"], "s": model.s, "grid_n": grid.n,
            "extent": grid.extent, "energy": state.energy, "converged": state.converged,
            "residual": state.residual, "iterations": state.iterations, "seed": state.seed,
            "starts": state.starts, "e_hat": rep.e_hat, "reduced_energy": rep.reduced,
            "identity_gap": rep.identity_gap, "renormalized_energy": rep.renormalized,
            "i_tf": rep.i_tf_target, "lambda_hat": prof.lambda_hat, "n_vortices": len(vort.vortices),
            "total_winding": vort.total_winding,
            "predicted_count": -math.log(eps) * dens.total_mass / (2 * math.pi),
            "norm_gap": vort.norm_gap if math.isfinite(vort.norm_gap) else None,
        }
        dump_json(summary, run.path(pre + "gp_summary.json"))
        trace = np.asarray(state.energy_trace)
        with open(run.path(pre + "plot_energy_trace.csv"), "w") as fh:
            fh.write("iteration,energy\n")
            for k, e in enumerate(trace):
                fh.write(f"{k},{float(e)!r}\n")
        if not state.converged:
            raise ConvergenceFailure(f"GP flow did not reach tol={cfg['tol']} at eps={eps:g}")
        out[f"{eps:g}"] = summary
    return out


def cmd_compare(cfg: dict, run: Run) -> dict:
    if not cfg["gp_dir"] or not cfg["mustar_dir"]:
        raise MissingInput("compare needs gp_dir and mustar_dir from earlier gp and mustar runs")
    gp_dir, ms_dir = Path(cfg["gp_dir"]), Path(cfg["mustar_dir"])
    needed = [gp_dir / "gp_state.bin", gp_dir / "gp_summary.json", ms_dir / "mustar_summary.json"]
    for p in needed:
        if not p.is_file():
            raise MissingInput(f"missing input: {p}")
    gp_sum = json.loads((gp_dir / "gp_summary.json").read_text())
    ms_sum = mustar.read_summary_json(ms_dir / "mustar_summary.json")
    if abs(gp_sum["omega0"] - ms_sum["omega0"]) > 1e-12 or gp_sum["s"] != ms_sum["s"]:
        raise ConfigError("omega0", "gp and mustar outputs were produced with different parameters")
    grid, psi = gpflow.read_state_binary(gp_dir / "gp_state.bin")
    eps, s = gp_sum["eps"], gp_sum["s"]
    model = tfcore.tf_model(s)
    state = gpflow.GpState(grid, psi, eps, gp_sum["omega0"], s, [gp_sum["energy"]], True)
    with run.stage("compare"), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        prof = gpflow.solve_radial_profile(
            eps, s, r_max=max(model.r_tf + 0.5, math.sqrt(2) * grid.extent + 0.05))
        vort = gpflow.extract_vorticity(state, prof)
        dens = mustar.mu_star(model, gp_sum["omega0"], support=ms_sum.get("support", "minimizer"))
        gap = gpflow.compare_to_mustar(vort, dens, eps)
    gpflow.write_radial_csv(vort, dens, run.path("compare_radial.csv"))
    result = {"eps": eps, "omega0": gp_sum["omega0"], "s": s, "norm_gap": gap,
              "n_vortices": len(vort.vortices),
              "predicted_count": -math.log(eps) * dens.total_mass / (2 * math.pi)}
    dump_json(result, run.path("compare.json"))
    return result


COMMANDS = {
    "tf": cmd_tf, "mustar": cmd_mustar, "renorm-min": cmd_renorm_min, "lattice": cmd_lattice,
    "green": cmd_green, "gp": cmd_gp, "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotvortex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value file")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./rotvortex-out)")
        p.add_argument("--s", help="trap exponent (>= 2)")
        p.add_argument("--omega0", help="rotation coefficient, a number or '<k>x-crit'")
        p.add_argument("--seed")
        return p

    p = common(sub.add_parser("tf", help="Thomas-Fermi and cost profiles"))
    p.add_argument("--n-nodes", dest="n_nodes")
    p = common(sub.add_parser("mustar", help="limiting vortex density"))
    p.add_argument("--n-nodes", dest="n_nodes")
    p.add_argument("--support", choices=["minimizer", "sublevel"])
    p = common(sub.add_parser("renorm-min", help="minimize the renormalized energy"))
    p.add_argument("--n-nodes", dest="n_nodes")
    p.add_argument("--init", choices=["zero", "random", "mustar"])
    p.add_argument("--max-iter", dest="max_iter")
    p.add_argument("--tol")
    p.add_argument("--accelerate")
    p = common(sub.add_parser("lattice", help="concentric-circle vortex points"))
    p.add_argument("--eps", help="one value or a comma-separated sweep")
    p.add_argument("--k0")
    p = common(sub.add_parser("green", help="log-singularity check of the weighted Green function"))
    p.add_argument("--n")
    p.add_argument("--pairs")
    p.add_argument("--sources")
    p.add_argument("--tol")
    p = common(sub.add_parser("gp", help="2D rotating GP ground state"))
    p.add_argument("--eps", help="one value or a comma-separated sweep")
    p.add_argument("--grid-n", dest="grid_n")
    p.add_argument("--max-iter", dest="max_iter")
    p.add_argument("--tol")
    p.add_argument("--starts")
    p = common(sub.add_parser("compare", help="distance of GP vorticity to the limiting density"))
    p.add_argument("--gp-dir", dest="gp_dir")
    p.add_argument("--mustar-dir", dest="mustar_dir")
    return parser


def _fail(kind: str, message: str, code: int, field_name=None) -> int:
    err = {"error": kind, "message": message}
    if field_name is not None:
        err["field"] = field_name
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    values = {k: v for k, v in vars(args).items() if k != "command"}
    try:
        cfg = resolve_config(args.command, values)
        run = Run(args.command, cfg, output_root(cfg))
        try:
            result = COMMANDS[args.command](cfg, run)
        finally:
            if run.files:
                run.write_manifest()
    except ConfigError as exc:
        return _fail("validation", str(exc), 2, exc.field)
    except MissingInput as exc:
        return _fail("missing_input", str(exc), 4)
    except (ConvergenceFailure, renorm.NotConverged, gpflow.GpNotConverged,
            field2d.SolverNotConverged) as exc:
        return _fail("convergence", str(exc), 3)
    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=_json_default)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
