"""Command-line behavior through in-process dispatch.

Exit-code contract: 0 success, 1 domain error with a JSON payload on
stderr, 2 usage error from the argument parser. Human output prints 6
significant digits; files carry 17.
"""

import json

import numpy as np
import pytest

from nldir.cli import dispatch
from nldir.study import CSV_HEADER


def write_config(tmp_path, **overrides):
    data = {"shape": {"interval": [0.0, 1.0]}, "deltas": [0.2],
            "case": "linear_x", "threads": 1}
    data.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


# ----------------------------------------------------------------- sigma

def test_sigma_quartic_1d(capsys):
    code = dispatch(["sigma", "--kernel", "quartic", "--p", "2", "--dim", "1"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "0.152381"


def test_sigma_quartic_2d(capsys):
    code = dispatch(["sigma", "--kernel", "quartic", "--p", "2", "--dim", "2"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "0.1309"


def test_sigma_unknown_kernel_gives_json_error(capsys):
    code = dispatch(["sigma", "--kernel", "gauss", "--p", "2", "--dim", "1"])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip())
    assert payload["error"] == "KernelError"


def test_sigma_bad_exponent_is_domain_error(capsys):
    code = dispatch(["sigma", "--kernel", "quartic", "--p", "1", "--dim", "1"])
    assert code == 1
    assert json.loads(capsys.readouterr().err.strip())["error"]


# -------------------------------------------------------- validate-kernel

def test_validate_kernel_passes_quartic(capsys):
    code = dispatch(["validate-kernel", "--kernel", "quartic"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("PASS") >= 3
    assert "FAIL" not in out


def test_validate_kernel_flags_increasing_tabulation(tmp_path, capsys):
    path = tmp_path / "rising.csv"
    s = np.linspace(0.0, 1.2, 200)
    np.savetxt(path, np.column_stack([s, 0.1 + s]), delimiter=",")
    code = dispatch(["validate-kernel", "--kernel", f"tabulated:{path}"])
    captured = capsys.readouterr()
    assert code == 1
    assert "FAIL" in captured.out
    payload = json.loads(captured.err.strip())
    assert payload["error"] == "KernelError"
    assert any("K2" in c for c in payload["conditions"])


# ------------------------------------------------------------ usage errors

def test_no_arguments_is_usage_error(capsys):
    assert dispatch([]) == 2
    capsys.readouterr()


def test_unknown_flag_is_usage_error(capsys):
    assert dispatch(["sweep", "--frobnicate"]) == 2
    capsys.readouterr()


def test_unknown_subcommand_is_usage_error(capsys):
    assert dispatch(["optimize"]) == 2
    capsys.readouterr()


# ---------------------------------------------------------------- config

def test_missing_config_flag(capsys):
    code = dispatch(["sweep"])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip())
    assert payload["field"] == "config"


def test_config_file_not_found(capsys):
    code = dispatch(["sweep", "--config", "/nonexistent/config.json"])
    assert code == 1
    assert "not found" in json.loads(capsys.readouterr().err.strip())["message"]


def test_config_invalid_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    code = dispatch(["sweep", "--config", str(path)])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip())
    assert "detail" in payload


def test_config_unknown_field_named(tmp_path, capsys):
    path = write_config(tmp_path, horizon=0.2)
    code = dispatch(["sweep", "--config", str(path)])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip())
    assert payload["field"] == "horizon"


def test_threads_env_fallback(tmp_path, capsys, monkeypatch):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"shape": {"interval": [0.0, 1.0]},
                                "deltas": [0.2], "case": "linear_x"}))
    monkeypatch.setenv("NLDIR_THREADS", "3")
    code = dispatch(["sweep", "--config", str(path), "--verbose"])
    captured = capsys.readouterr()
    assert code == 0
    line = next(l for l in captured.err.splitlines() if l.startswith("config:"))
    assert json.loads(line[len("config:"):])["threads"] == 3


def test_threads_flag_beats_env(tmp_path, capsys, monkeypatch):
    path = write_config(tmp_path)
    monkeypatch.setenv("NLDIR_THREADS", "3")
    code = dispatch(["sweep", "--config", str(path), "--threads", "2",
                     "--verbose"])
    captured = capsys.readouterr()
    assert code == 0
    line = next(l for l in captured.err.splitlines() if l.startswith("config:"))
    assert json.loads(line[len("config:"):])["threads"] == 2


def test_threads_env_must_be_integer(tmp_path, capsys, monkeypatch):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"shape": {"interval": [0.0, 1.0]},
                                "deltas": [0.2], "case": "linear_x"}))
    monkeypatch.setenv("NLDIR_THREADS", "many")
    code = dispatch(["sweep", "--config", str(path)])
    assert code == 1
    assert "NLDIR_THREADS" in json.loads(capsys.readouterr().err.strip())["message"]


def test_seed_override_visible_in_verbose(tmp_path, capsys):
    path = write_config(tmp_path)
    code = dispatch(["sweep", "--config", str(path), "--seed", "99",
                     "--verbose"])
    captured = capsys.readouterr()
    assert code == 0
    line = next(l for l in captured.err.splitlines() if l.startswith("config:"))
    assert json.loads(line[len("config:"):])["seed"] == 99


# ----------------------------------------------------------------- sweep

def test_sweep_writes_csv_and_leaves_config_alone(tmp_path, capsys):
    path = write_config(tmp_path, deltas=[0.2, 0.1])
    before = path.read_bytes()
    out = tmp_path / "rows.csv"
    code = dispatch(["sweep", "--config", str(path), "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 0
    assert path.read_bytes() == before
    lines = out.read_text().strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert len(lines) == 3
    # machine precision: 17 significant digits for delta
    assert lines[1].split(",")[0] == f"{0.2:.17g}"
    assert CSV_HEADER.replace(",", "  ") in captured.out


def test_sweep_all_rows_failing_exits_one(tmp_path, capsys):
    path = write_config(tmp_path, deltas=[8.0])
    code = dispatch(["sweep", "--config", str(path)])
    captured = capsys.readouterr()
    assert code == 1
    assert "ERROR" in captured.err


# ----------------------------------------------------------------- solve

def test_solve_writes_field_csv(tmp_path, capsys):
    path = write_config(tmp_path)
    out = tmp_path / "field.csv"
    code = dispatch(["solve", "--config", str(path), "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 0
    assert "l2_error" in captured.out
    assert "converged True" in captured.out
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "x,u"
    assert len(lines) == 1 + 20   # h = 0.05 on the unit interval
    x0, u0 = lines[1].split(",")
    assert float(x0) == pytest.approx(0.025)
    assert len(u0) >= 17   # full precision written


# ----------------------------------------------------------------- eigen

def test_eigen_csv_both_masses(tmp_path, capsys):
    path = write_config(tmp_path, case="zero", eigen_modes=2,
                        eigen_mass="both")
    out = tmp_path / "modes.csv"
    code = dispatch(["eigen", "--config", str(path), "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "mode,lambda,residual,mass_model,delta,h"
    assert len(lines) == 5
    assert lines[1].split(",")[3] == "L2"
    assert lines[3].split(",")[3] == "nonlocalW"
    assert captured.out.count("mode 1") == 2


def test_eigen_requires_modes_in_config(tmp_path, capsys):
    path = write_config(tmp_path, case="zero")
    code = dispatch(["eigen", "--config", str(path)])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip())
    assert payload["field"] == "eigen_modes"


# --------------------------------------------------------------- compare

def test_compare_prints_distances(tmp_path, capsys):
    path = write_config(tmp_path, variants=["product", "wang"])
    code = dispatch(["compare", "--config", str(path)])
    captured = capsys.readouterr()
    assert code == 0
    assert "distance product|wang at delta 0.2:" in captured.out


def test_compare_requires_variants(tmp_path, capsys):
    path = write_config(tmp_path)
    code = dispatch(["compare", "--config", str(path)])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip())
    assert payload["field"] == "variants"


# ------------------------------------------------------------------ probe

def test_probe_coercivity_reports_and_saves(tmp_path, capsys):
    path = write_config(tmp_path, case="zero", trials=10,
                        out_json=str(tmp_path / "probe.json"))
    code = dispatch(["probe-coercivity", "--config", str(path)])
    captured = capsys.readouterr()
    assert code == 0
    assert "min_ratio" in captured.out
    doc = json.loads((tmp_path / "probe.json").read_text())
    assert doc["variant"] == "product"
    assert len(doc["ratios"]) == 10
    assert doc["min_ratio"] > 0
