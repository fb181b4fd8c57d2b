import json
import math

import pytest

from rotvortex import cli, gpflow, mustar, renorm, tfcore


def run(args, capsys):
    code = cli.main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_tf_command(tmp_path, capsys):
    code, out, _ = run(["tf", "--s", "2", "--omega0", "3.5449", "--out", str(tmp_path)], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "tf_summary.json").read_text())
    assert summary["lambda_tf"] == pytest.approx(1.128379, abs=1e-6)
    prof = tfcore.read_profile_csv(tmp_path / "tf_profile.csv")
    assert prof["r"].size == 2048
    manifest = json.loads((tmp_path / "manifest-tf.json").read_text())
    assert set(manifest["files"]) == {"tf_profile.csv", "tf_summary.json"}
    assert manifest["version"] and "tf" in manifest["timings"]


def test_bad_exponent_is_a_validation_error(tmp_path, capsys):
    code, _, err = run(["tf", "--s", "1", "--out", str(tmp_path)], capsys)
    assert code == 2
    payload = json.loads(err)
    assert payload["error"] == "validation" and payload["field"] == "s"


def test_outputs_are_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["mustar", "--omega0", "2x-crit", "--out", str(d)], capsys)[0] == 0
    ma = json.loads((a / "manifest-mustar.json").read_text())["files"]
    mb = json.loads((b / "manifest-mustar.json").read_text())["files"]
    assert ma == mb


def test_mustar_command(tmp_path, capsys):
    run(["mustar", "--s", "2", "--omega0", "2x-crit", "--out", str(tmp_path)], capsys)
    summary = mustar.read_summary_json(tmp_path / "mustar_summary.json")
    assert summary["r1_over_r"] == pytest.approx(0.707107, abs=1e-6)
    dens = mustar.read_density_csv(tmp_path / "mustar_density.csv")
    assert list(dens) == ["r", "m_star", "mu_star"]


def test_mustar_below_critical_rejected(tmp_path, capsys):
    code, _, err = run(["mustar", "--omega0", "0.5x-crit", "--out", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err)["field"] == "omega0"


def test_renorm_command(tmp_path, capsys):
    code, _, _ = run(["renorm-min", "--init", "zero", "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = renorm.read_report_json(tmp_path / "renorm_report.json")
    assert rep["converged"] is True
    assert rep["l1_gap_fraction"] <= 0.02
    nu, _ = renorm.read_measure_csv(tmp_path / "renorm_measure.csv")
    assert nu.n == 2048


def test_renorm_reports_non_convergence(tmp_path, capsys):
    code, _, err = run(["renorm-min", "--init", "random", "--max-iter", "3", "--out", str(tmp_path)],
                       capsys)
    assert code == 3 and json.loads(err)["error"] == "convergence"
    assert (tmp_path / "renorm_report.json").is_file()


def test_compare_without_inputs(tmp_path, capsys):
    code, _, err = run(["compare", "--out", str(tmp_path)], capsys)
    assert code == 4 and json.loads(err)["error"] == "missing_input"
    code, _, _ = run(["compare", "--gp-dir", str(tmp_path / "nope"), "--mustar-dir", str(tmp_path),
                      "--out", str(tmp_path)], capsys)
    assert code == 4


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep\nomega0 = 3x-crit\nn_nodes = 512\n")
    run(["mustar", "--config", str(cfg), "--out", str(tmp_path / "file")], capsys)
    run(["mustar", "--config", str(cfg), "--omega0", "2x-crit", "--out", str(tmp_path / "cli")], capsys)
    w1 = tfcore.omega_c1(tfcore.tf_model(2))
    s_file = mustar.read_summary_json(tmp_path / "file" / "mustar_summary.json")
    s_cli = mustar.read_summary_json(tmp_path / "cli" / "mustar_summary.json")
    assert s_file["omega0"] == pytest.approx(3 * w1)
    assert s_cli["omega0"] == pytest.approx(2 * w1)
    assert mustar.read_density_csv(tmp_path / "cli" / "mustar_density.csv")["r"].size == 512


def test_config_rejects_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(["tf", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err)["field"] == "colour"


def test_output_root_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert run(["tf"], capsys)[0] == 0
    assert (tmp_path / "env" / "tf_summary.json").is_file()


def test_omega0_forms():
    w1 = tfcore.omega_c1(tfcore.tf_model(3.0))
    assert cli.parse_omega0("1.5x-crit", 3.0) == pytest.approx(1.5 * w1)
    assert cli.parse_omega0("4.25", 3.0) == 4.25
    with pytest.raises(ValueError):
        cli.parse_omega0("fast", 2.0)


def test_lattice_sweep(tmp_path, capsys):
    code, _, _ = run(["lattice", "--eps", "1e-3,1e-5", "--out", str(tmp_path)], capsys)
    assert code == 0
    for e in ("0.001", "1e-05"):
        data = json.loads((tmp_path / f"eps_{e}" / "lattice_summary.json").read_text())
        assert data["eps"] == float(e)


def test_gp_then_compare(tmp_path, capsys):
    gp_dir, ms_dir = tmp_path / "gp", tmp_path / "ms"
    code, _, err = run(["gp", "--eps", "0.1", "--grid-n", "129", "--starts", "1",
                        "--out", str(gp_dir)], capsys)
    assert code == 0, err
    for name in ("gp_state.bin", "gp_vortices.csv", "gp_radial.csv", "gp_summary.json",
                 "plot_density.csv", "plot_energy_trace.csv"):
        assert (gp_dir / name).is_file()
    summary = json.loads((gp_dir / "gp_summary.json").read_text())
    assert summary["converged"] and summary["reduced_energy"] < 0
    assert len(gpflow.read_vortices_csv(gp_dir / "gp_vortices.csv")) == summary["n_vortices"]
    run(["mustar", "--out", str(ms_dir)], capsys)
    code, _, err = run(["compare", "--gp-dir", str(gp_dir), "--mustar-dir", str(ms_dir),
                        "--out", str(tmp_path / "cmp")], capsys)
    assert code == 0, err
    result = json.loads((tmp_path / "cmp" / "compare.json").read_text())
    assert result["norm_gap"] == pytest.approx(summary["norm_gap"], rel=1e-9)
    assert math.isfinite(result["norm_gap"])


def test_gp_grid_too_coarse(tmp_path, capsys):
    code, _, err = run(["gp", "--eps", "0.02", "--grid-n", "129", "--out", str(tmp_path)], capsys)
    assert code == 2 and json.loads(err)["field"] == "grid_n"


def test_green_command(tmp_path, capsys):
    code, _, _ = run(["green", "--n", "65", "--pairs", "4", "--sources", "2", "--out", str(tmp_path)],
                     capsys)
    assert code == 0
    data = json.loads((tmp_path / "green_check.json").read_text())
    assert data["grids"] == [65, 129] and data["n_pairs"] == 4
