import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from conftest import ALL_PRESETS
from vide.cli import SWEEP_COLUMNS, main
from vide.config import (
    ProblemConfig,
    dump_config,
    load_config,
    load_problem,
    parse_config,
    preset,
    save_config,
    set_param,
    sweepable_params,
)
from vide.errors import ConfigParseError, DimensionMismatch, InvalidConfig, UnknownBuiltin
from vide.grid import DerivCoords
from vide.problem import residual_F


def write(tmp_path, cfg, name="cfg.toml"):
    path = tmp_path / name
    save_config(cfg, path)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- loading -----------------------------------------------------------------

def test_zero_kernel_constant_rhs(tmp_path):
    text = """
name = "flat"
grid_n = 40
[kernel]
builtin = "zero"
[rhs]
builtin = "constant"
params = [2.5]
"""
    path = tmp_path / "flat.toml"
    path.write_text(text)
    p = load_problem(path)
    l = DerivCoords(p.grid, np.full((p.grid.n_nodes, 1), 2.5))
    assert np.max(np.abs(residual_F(l, p))) == 0.0


def test_parse_error_has_line():
    with pytest.raises(ConfigParseError) as info:
        parse_config('name = "x"\ngrid_n = = 3\n')
    assert info.value.line == 2
    assert info.value.code == "parse_error"


def test_unknown_builtin():
    with pytest.raises(UnknownBuiltin) as info:
        parse_config('[kernel]\nbuiltin = "nope"\n')
    assert info.value.code == "unknown_builtin"


def test_dimension_mismatch():
    text = 'grid_n = 4\n[controls.v]\nkind = "nodes"\nvalues = [1.0, 2.0]\n'
    with pytest.raises(DimensionMismatch) as info:
        parse_config(text)
    assert info.value.code == "dimension_mismatch"


def test_grid_n_one_rejected():
    with pytest.raises(InvalidConfig):
        parse_config("grid_n = 1\n")


def test_unknown_key_rejected():
    with pytest.raises(InvalidConfig):
        parse_config("grdi_n = 10\n")


def test_error_codes_are_distinct():
    codes = {ConfigParseError.code, UnknownBuiltin.code, DimensionMismatch.code, InvalidConfig.code}
    assert len(codes) == 4


@pytest.mark.parametrize("name", ALL_PRESETS)
def test_round_trip(tmp_path, name):
    cfg = preset(name)
    p1 = load_problem(write(tmp_path, cfg))
    p2 = load_problem(write(tmp_path, p1, "again.toml"))
    assert p1.config == p2.config == cfg
    np.testing.assert_array_equal(p1.controls.u, p2.controls.u)
    np.testing.assert_array_equal(p1.controls.v, p2.controls.v)
    x = DerivCoords(p1.grid, np.sin(p1.grid.nodes)[:, None])
    np.testing.assert_array_equal(residual_F(x, p1), residual_F(x, p2))
    assert dump_config(p1) == dump_config(p2)


def test_nodes_controls_round_trip(tmp_path):
    vals = list(np.linspace(0, 1, 11))
    cfg = preset("passthrough", grid_n=10, v={"kind": "nodes", "values": vals})
    back = load_config(write(tmp_path, cfg))
    assert back.v["values"] == vals


def test_set_param_paths():
    cfg = preset("nonlinear_exp")
    assert "kernel.alpha" in sweepable_params(cfg)
    assert set_param(cfg, "kernel.alpha", 0.2).kernel_params[0] == 0.2
    assert set_param(cfg, "grid_n", 64.0).grid_n == 64
    assert set_param(cfg, "controls.v.amplitude", 2.0).v["amplitude"] == 2.0
    assert cfg.kernel_params[0] == 0.5
    with pytest.raises(InvalidConfig):
        set_param(cfg, "kernel.nope", 1.0)
    with pytest.raises(InvalidConfig):
        set_param(cfg, "grid_n", 2.5)


# -- solve -------------------------------------------------------------------

def test_solve_sin_csv(tmp_path):
    path = write(tmp_path, preset("sin_oracle"))
    out = tmp_path / "sin.csv"
    assert main(["solve", str(path), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 201
    err = max(abs(float(r["x"]) - math.sin(float(r["t"]))) for r in rows)
    assert err <= 1e-4
    assert float(rows[0]["exact_max_error"]) == pytest.approx(err, rel=1e-12)


def test_solve_is_deterministic(tmp_path):
    path = write(tmp_path, preset("nonlinear_exp"))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["solve", str(path), "--out", str(a)]) == 0
    assert main(["solve", str(path), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_solve_both_discrepancy(tmp_path):
    path = write(tmp_path, preset("linear_coercive"))
    out = tmp_path / "both.json"
    assert main(["solve", str(path), "--solver", "both", "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["meta"]["discrepancy"] <= 1e-5
    assert len(doc["rows"]) == 201 and set(doc["rows"][0]) == {"t", "x", "l"}


def test_solve_nonconvergence_exit_2(tmp_path):
    path = write(tmp_path, preset("nonlinear_exp", max_iter=2))
    assert main(["solve", str(path), "--out", str(tmp_path / "o.csv")]) == 2


def test_solve_malformed_exit_1(tmp_path, monkeypatch):
    bad = tmp_path / "bad.toml"
    bad.write_text("grid_n = [\n")
    outdir = tmp_path / "outdir"
    monkeypatch.setenv("VIDE_OUTPUT_DIR", str(outdir))
    out = tmp_path / "never.csv"
    assert main(["solve", str(bad), "--out", str(out)]) == 1
    assert main(["solve", str(bad)]) == 1
    assert main(["solve", str(tmp_path / "missing.toml")]) == 1
    assert not out.exists() and not outdir.exists()


def test_bad_flags_exit_1(tmp_path):
    path = write(tmp_path, preset("zero"))
    assert main(["solve", str(path), "--solver", "newton"]) == 1
    assert main(["frobnicate"]) == 1


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("VIDE_OUTPUT_DIR", str(tmp_path / "res"))
    path = write(tmp_path, preset("passthrough", grid_n=20))
    assert main(["solve", str(path)]) == 0
    rows = read_csv(tmp_path / "res" / "passthrough-solve.csv")
    assert len(rows) == 21 and all(float(r["l"]) == 1.0 for r in rows)


def test_stdout_default(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("VIDE_OUTPUT_DIR", raising=False)
    path = write(tmp_path, preset("zero", grid_n=5))
    assert main(["solve", str(path)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 6


# -- check -------------------------------------------------------------------

def check_output(capsys, tmp_path, cfg, *extra):
    code = main(["check", str(write(tmp_path, cfg)), *extra])
    lines = dict(line.split(": ", 1) for line in capsys.readouterr().out.splitlines())
    return code, lines


def test_check_zero(capsys, tmp_path):
    code, out = check_output(capsys, tmp_path, preset("zero"))
    assert code == 0 and out["result"] == "pass"
    assert float(out["margin"]) == pytest.approx(0.70711, abs=1e-5)
    assert float(out["threshold"]) == math.sqrt(2) / 2


def test_check_coercive(capsys, tmp_path):
    code, out = check_output(capsys, tmp_path, preset("linear_coercive"), "--probe", "50")
    assert code == 0
    assert float(out["margin"]) == pytest.approx(0.14711, abs=1e-5)
    assert float(out["C2"]) == pytest.approx(0.1040, abs=1e-4)
    assert out["probe"] == "pass"


def test_check_violating_exit_3(capsys, tmp_path):
    code, out = check_output(capsys, tmp_path, preset("linear_violating"))
    assert code == 3 and out["result"] == "fail"
    assert float(out["lhs"]) == pytest.approx(0.8, abs=1e-12)


def test_check_bad_input_exit_1(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('[rhs]\nbuiltin = "nope"\n')
    assert main(["check", str(bad)]) == 1


# -- sensitivity ---------------------------------------------------------------

def test_sensitivity_oracle(tmp_path):
    path = write(tmp_path, preset("sensitivity_oracle"))
    out = tmp_path / "z.csv"
    assert main(["sensitivity", str(path), "--dv", "constant:1", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert max(abs(float(r["z"]) - math.sin(float(r["t"]))) for r in rows) <= 1e-4
    assert float(rows[0]["linearized_residual_l2"]) <= 1e-9


def test_sensitivity_zero_direction(tmp_path):
    path = write(tmp_path, preset("nonlinear_exp"))
    out = tmp_path / "z.csv"
    assert main(["sensitivity", str(path), "--out", str(out), "--eps", "1e-3"]) == 0
    rows = read_csv(out)
    assert all(float(r["z"]) == 0.0 and float(r["fd_error"]) <= 1e-12 for r in rows)


def test_sensitivity_passthrough_integrates(tmp_path):
    path = write(tmp_path, preset("passthrough"))
    out = tmp_path / "z.csv"
    assert main(["sensitivity", str(path), "--dv", "constant:value=2", "--out", str(out)]) == 0
    assert all(float(r["z"]) == pytest.approx(2 * float(r["t"]), abs=1e-13) for r in read_csv(out))


def test_sensitivity_fd_column(tmp_path):
    path = write(tmp_path, preset("linear_coercive"))
    out = tmp_path / "z.csv"
    args = ["sensitivity", str(path), "--du", "sine:1,2", "--dv", "constant:1", "--eps", "1e-2"]
    assert main(args + ["--out", str(out)]) == 0
    rows = read_csv(out)
    assert max(float(r["fd_error"]) for r in rows) <= 2e-9


def test_sensitivity_exit_codes(tmp_path):
    bad = write(tmp_path, preset("nonlinear_exp", max_iter=2))
    assert main(["sensitivity", str(bad), "--dv", "constant:1", "--out", str(tmp_path / "o.csv")]) == 2
    ok = write(tmp_path, preset("nonlinear_exp"), "ok.toml")
    assert main(["sensitivity", str(ok), "--dv", "wobble:1"]) == 1
    assert main(["sensitivity", str(ok), "--dv", "constant:abc"]) == 1


# -- sweep -------------------------------------------------------------------

def test_sweep_margin_decreasing(tmp_path):
    path = write(tmp_path, preset("linear_violating"))
    out = tmp_path / "sweep.csv"
    values = "0.1,0.2,0.3,0.4,0.5,0.6,0.7"
    assert main(["sweep", str(path), "--param", "kernel.alpha", "--values", values,
                 "--jobs", "3", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0])[: len(SWEEP_COLUMNS)] == SWEEP_COLUMNS
    assert [float(r["value"]) for r in rows] == [float(v) for v in values.split(",")]
    margins = [float(r["condition_margin"]) for r in rows]
    assert all(a > b for a, b in zip(margins, margins[1:]))
    assert all(r["converged"] == "true" for r in rows)


def test_sweep_grid_error_ratio(tmp_path):
    path = write(tmp_path, preset("sin_oracle"))
    out = tmp_path / "grid.csv"
    assert main(["sweep", str(path), "--param", "grid_n", "--values", "50,100,200", "--out", str(out)]) == 0
    errs = [float(r["error"]) for r in read_csv(out)]
    for a, b in zip(errs, errs[1:]):
        assert 3.2 <= a / b <= 4.8


def test_sweep_failures_recorded_in_row(tmp_path):
    path = write(tmp_path, preset("sin_oracle"))
    out = tmp_path / "s.csv"
    assert main(["sweep", str(path), "--param", "grid_n", "--values", "1,20", "--out", str(out)]) == 0
    bad, good = read_csv(out)
    assert bad["converged"] == "false" and bad["message"]
    assert good["converged"] == "true"


def test_sweep_empty_values_exit_1(tmp_path):
    path = write(tmp_path, preset("sin_oracle"))
    assert main(["sweep", str(path), "--param", "grid_n", "--values", ""]) == 1
    assert main(["sweep", str(path), "--param", "grid_n", "--values", " , "]) == 1
    assert main(["sweep", str(path), "--param", "nope", "--values", "1"]) == 1


def test_sweep_jobs_do_not_change_output(tmp_path):
    path = write(tmp_path, preset("nonlinear_exp"))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    vals = "0.1,0.3,0.5,0.7"
    assert main(["sweep", str(path), "--param", "kernel.alpha", "--values", vals, "--out", str(a)]) == 0
    assert main(["sweep", str(path), "--param", "kernel.alpha", "--values", vals, "--jobs", "4",
                 "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


# -- preset / entry point -----------------------------------------------------

def test_preset_command(tmp_path):
    out = tmp_path / "p.toml"
    assert main(["preset", "sin_oracle", "--grid-n", "50", "--out", str(out)]) == 0
    assert load_config(out).grid_n == 50
    assert main(["preset", "sin_oracle", "--grid-n", "1"]) == 1


def test_module_entry_point(tmp_path):
    path = write(tmp_path, preset("linear_violating"))
    proc = subprocess.run([sys.executable, "-m", "vide", "check", str(path)], capture_output=True, text=True)
    assert proc.returncode == 3
    assert "result: fail" in proc.stdout
