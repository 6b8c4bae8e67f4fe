import json

import pytest

from skewlin.cli import EXIT_BOUNDS, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, RunConfig, load_config, run

FAST = ["--nb", "16", "--nx", "9"]
LIGHT = {"holder_pairs": 500, "bound_pairs": 500, "depth": 3, "residual_random": 500,
         "scales": [0.25, 0.125, 0.0625]}


def write_cfg(tmp_path, family, name="cfg.json", **extra):
    cfg = {"family": family, "solver": {"epsilon": 0.05}, "analysis": LIGHT,
           "output_dir": str(tmp_path / "out"), **extra}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def stderr_json(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    return json.loads(lines[-1])


def report(tmp_path):
    return json.loads((tmp_path / "out" / "report.json").read_text())


def test_linearize_mobius(tmp_path):
    cfg = write_cfg(tmp_path, {"family": "mobius", "lam": 0.5, "m": 0.1})
    assert run(["linearize", cfg, *FAST]) == EXIT_OK
    rep = report(tmp_path)
    assert rep["solver"]["converged"] and rep["oracle_error"] <= 1e-6
    assert (tmp_path / "out" / "h.csv").exists() and (tmp_path / "out" / "h.bin").exists()
    assert "timestamp" not in rep


def test_alpha_above_max_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"family": "quadratic"})
    assert run(["linearize", cfg, *FAST, "--alpha", "0.9"]) == EXIT_CONFIG
    diag = stderr_json(capsys)
    assert diag["exit_code"] == 2 and "theta" in diag["message"]


def test_wide_family_needs_globalization(tmp_path, capsys):
    fam = {"family": "custom", "expression": "(0.85 - 0.35*cos(2*pi*b1))*x + 0.3*x^2*(1 - x)"}
    cfg = write_cfg(tmp_path, fam)
    assert run(["linearize", cfg, *FAST]) == EXIT_CONFIG
    assert "globalization required" in stderr_json(capsys)["message"]


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"family": "quadratic"}, bogus=1)
    assert run(["linearize", cfg]) == EXIT_CONFIG
    assert "bogus" in stderr_json(capsys)["message"]


def test_divergence_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"family": "quadratic"})
    assert run(["linearize", cfg, *FAST, "--max-iter", "1"]) == EXIT_DIVERGED
    assert stderr_json(capsys)["exit_code"] == 3


def test_strict_bound_failure(tmp_path, capsys):
    light = {**LIGHT, "slack": -0.999}
    cfg = write_cfg(tmp_path, {"family": "quadratic"}, analysis=light)
    assert run(["verify", cfg, *FAST]) == EXIT_OK
    assert report(tmp_path)["bound_failures"] > 0
    assert run(["verify", cfg, *FAST, "--strict"]) == EXIT_BOUNDS
    assert stderr_json(capsys)["exit_code"] == 4


def test_verify_outputs(tmp_path):
    cfg = write_cfg(tmp_path, {"family": "quadratic"})
    assert run(["verify", cfg, *FAST, "--strict"]) == EXIT_OK
    ver = report(tmp_path)["verification"]
    assert ver["narrow_band"] is True
    assert ver["conjugacy_residual"] < 1e-4
    assert (tmp_path / "out" / "bounds.csv").read_text().startswith("name,n,variant")
    assert (tmp_path / "out" / "holder_table.csv").exists()


def test_holder_exact_in_b(tmp_path):
    cfg = write_cfg(tmp_path, {"family": "mobius", "lam": 0.5, "m": 0.1})
    assert run(["holder", cfg, *FAST]) == EXIT_OK
    assert report(tmp_path)["holder"]["label"] == "exact in b"


def test_constants_table(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"family": "mobius", "lam": 0.5, "m": 0.1})
    assert run(["constants", cfg, *FAST]) == EXIT_OK
    table = dict(line.split(None, 1) for line in capsys.readouterr().out.strip().splitlines())
    assert float(table["L_C_norm_bound"]) == pytest.approx(4.0)
    assert report(tmp_path)["constants"]["narrow_band"] is True


def test_globalize_only(tmp_path):
    fam = {"family": "custom", "expression": "(0.85 - 0.35*cos(2*pi*b1))*x + 0.3*x^2*(1 - x)"}
    glob = {"center": [0.0, 0.0], "r_inner": 0.1, "r_outer": 0.25}
    cfg = write_cfg(tmp_path, fam, globalize=glob)
    assert run(["globalize-only", cfg]) == EXIT_OK
    g = report(tmp_path)["globalization"]
    assert g["max_multiplier"] < 1 and g["max_inner_defect"] == 0.0


def test_report_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, {"family": "quadratic"})
    out = []
    for workers in ("1", "8", "1"):
        assert run(["linearize", cfg, *FAST, "--workers", workers]) == EXIT_OK
        out.append((tmp_path / "out" / "report.json").read_bytes())
    assert out[0] == out[1] == out[2]


def test_config_round_trip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"family": {"family": "quadratic"}, "solver": {"n_b": 32}}))
    cfg = load_config(str(path))
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.effective()))).effective() == cfg.effective()


def test_shipped_configs_load():
    for name in ("mobius_example", "quadratic_example", "globalize_example"):
        load_config(f"configs/{name}.json")
