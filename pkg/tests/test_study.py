"""Sweep driver, manufactured catalog, coercivity probes, reports.

Coercivity fixtures below were frozen from a 100-trial pilot on the
unit square with this exact code and seed (12345): product penalty
min_ratio 22.78 at delta=0.1 (c_n 0.228) and 100.48 at delta=0.05
(c_n 0.251); dirac_diagonal 441.77 (c_n 4.42) and 1955.6 (c_n 4.89).
Thresholds keep a factor-two margin from those measurements. The
module-level tests run a lighter interval version; the full square
pilot is re-executed in the acceptance gate.
"""

import json

import numpy as np
import pytest

from nldir import (ConfigError, PenaltySpec, SolveOptions, StudyConfig,
                   StudyReport, build_mesh, coercivity_probe,
                   compare_penalties, manufactured_case, report_csv_text,
                   report_json_dict, run_delta_sweep)
from nldir.kernels import QUARTIC, KernelSpec
from nldir.study import CSV_HEADER

LINEAR_CFG = StudyConfig(shape={"interval": [0.0, 1.0]},
                         deltas=(0.2, 0.1, 0.05), case="linear_x")


def rows_equal_modulo_seconds(a, b):
    for ra, rb in zip(a, b):
        for name in ("delta", "h", "penalty", "p", "l2_error", "trace_norm",
                     "energy", "sigma_r", "ratio_to_limit", "converged",
                     "iterations", "eigen_lambdas", "error"):
            if getattr(ra, name) != getattr(rb, name):
                return False
    return len(a) == len(b)


# --------------------------------------------------------------- config

def test_config_round_trips_through_dict():
    cfg = StudyConfig(shape={"rect": [[0.0, 0.0], [1.0, 1.0]]},
                      deltas=(0.2, 0.1), ratio=8.0, p=3.0, case="zero",
                      solver=SolveOptions(tol=1e-8), eigen_modes=2,
                      variants=("product", "wang"))
    back = StudyConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_config_from_dict_names_unknown_field():
    with pytest.raises(ConfigError) as exc:
        StudyConfig.from_dict({"shape": {"interval": [0, 1]},
                               "deltas": [0.2], "mesh_size": 0.05})
    assert exc.value.info["field"] == "mesh_size"
    assert "deltas" in exc.value.info["supported"]


@pytest.mark.parametrize("bad", [
    dict(deltas=()),
    dict(deltas=(0.1, 0.2)),
    dict(deltas=(0.2, 0.2)),
    dict(deltas=(0.2, -0.1)),
    dict(deltas=(0.2,), ratio=1.5),
    dict(deltas=(0.2,), p=1.0),
    dict(deltas=(0.2,), eigen_modes=-1),
    dict(deltas=(0.2,), eigen_mass="diag"),
    dict(deltas=(0.2,), threads=0),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        StudyConfig(shape={"interval": [0.0, 1.0]}, **bad)


def test_nested_solver_options_parse():
    cfg = StudyConfig.from_dict({
        "shape": {"interval": [0.0, 1.0]}, "deltas": [0.2],
        "solver": {"tol": 1e-7, "max_iter": 500}})
    assert cfg.solver.tol == 1e-7
    with pytest.raises(ConfigError):
        StudyConfig.from_dict({
            "shape": {"interval": [0.0, 1.0]}, "deltas": [0.2],
            "solver": {"tol": 1e-7, "verbosity": 3}})


# -------------------------------------------------------------- catalog

def test_catalog_contents():
    for cid in ("zero", "linear_x", "harmonic_x2_minus_y2", "harmonic_xy"):
        case = manufactured_case(cid)
        assert case.id == cid
    with pytest.raises(ConfigError) as exc:
        manufactured_case("quartic_bump")
    assert "harmonic_xy" in exc.value.info["catalog"]


def test_catalog_admits_rules():
    assert manufactured_case("zero").admits(1, 3.0)
    assert manufactured_case("linear_x").admits(2, 4.5)
    harm = manufactured_case("harmonic_xy")
    assert harm.admits(2, 2.0)
    assert not harm.admits(1, 2.0)
    assert not harm.admits(2, 3.0)


def test_catalog_exact_values():
    pts1 = np.array([[0.25], [0.5]])
    assert np.allclose(manufactured_case("linear_x").exact(pts1), [0.25, 0.5])
    assert np.all(manufactured_case("zero").exact(pts1) == 0.0)
    pts2 = np.array([[0.5, 0.25], [1.0, 1.0]])
    assert np.allclose(manufactured_case("harmonic_x2_minus_y2").exact(pts2),
                       [0.1875, 0.0])
    # |grad(x^2-y^2)|^2 = 4(x^2+y^2)
    assert np.allclose(
        manufactured_case("harmonic_x2_minus_y2").grad_power(pts2, 2.0),
        [4 * (0.25 + 0.0625), 8.0])
    assert np.allclose(manufactured_case("linear_x").grad_power(pts1, 3.0),
                       [1.0, 1.0])


def test_incompatible_case_is_rejected_up_front():
    cfg = StudyConfig(shape={"interval": [0.0, 1.0]}, deltas=(0.2,),
                      case="harmonic_xy")
    with pytest.raises(ConfigError):
        run_delta_sweep(cfg)


# --------------------------------------------------------------- sweeps

def test_linear_sweep_trends():
    rep = run_delta_sweep(LINEAR_CFG)
    rows = rep.ok_rows()
    assert len(rows) == 3
    l2 = [r.l2_error for r in rows]
    tr = [r.trace_norm for r in rows]
    assert l2[0] > l2[1] > l2[2]
    assert tr[0] > tr[1] > tr[2]
    gaps = [abs(r.ratio_to_limit - 1.0) for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]
    for r in rows:
        assert 0.85 <= r.ratio_to_limit <= 1.25
        assert r.converged
        assert r.sigma_r == pytest.approx(16.0 / 105.0, rel=1e-6)
        assert r.h == pytest.approx(r.delta / 4.0, rel=1e-12)
        assert r.seconds >= 0.0


def test_failing_row_is_recorded_not_raised():
    cfg = StudyConfig(shape={"interval": [0.0, 1.0]}, deltas=(8.0, 0.2),
                      case="linear_x")
    rep = run_delta_sweep(cfg)
    assert len(rep.rows) == 2
    bad, good = rep.rows
    assert bad.error is not None and bad.error.startswith("MeshError")
    assert bad.l2_error is None
    assert good.error is None
    assert rep.ok_rows() == [good]


def test_sweep_deterministic_modulo_seconds():
    r1 = run_delta_sweep(LINEAR_CFG)
    r2 = run_delta_sweep(LINEAR_CFG)
    assert rows_equal_modulo_seconds(r1.rows, r2.rows)


def test_threaded_sweep_matches_serial():
    import dataclasses
    threaded = dataclasses.replace(LINEAR_CFG, threads=3)
    r1 = run_delta_sweep(LINEAR_CFG)
    r2 = run_delta_sweep(threaded)
    assert rows_equal_modulo_seconds(r1.rows, r2.rows)


def test_sweep_environment_stamp():
    rep = run_delta_sweep(LINEAR_CFG)
    env = rep.environment
    assert env["kernels"]["R"] == "quartic"
    assert env["case"] == "linear_x"
    assert env["shape"] == {"interval": [0.0, 1.0]}
    assert env["ratio"] == 4.0
    assert "version" in env


def test_eigen_rows_carry_lambdas():
    cfg = StudyConfig(shape={"interval": [0.0, 1.0]}, deltas=(0.2,),
                      case="zero", eigen_modes=2)
    rep = run_delta_sweep(cfg)
    row = rep.ok_rows()[0]
    assert len(row.eigen_lambdas) == 2
    assert 0.0 < row.eigen_lambdas[0] < row.eigen_lambdas[1]


def test_zero_case_minimizer_is_zero():
    cfg = StudyConfig(shape={"interval": [0.0, 1.0]}, deltas=(0.2,),
                      case="zero")
    row = run_delta_sweep(cfg).ok_rows()[0]
    assert row.l2_error == 0.0
    assert row.energy == 0.0
    assert row.ratio_to_limit is None


# -------------------------------------------------------------- reports

def test_csv_text_layout():
    rep = run_delta_sweep(LINEAR_CFG)
    text = report_csv_text(rep)
    lines = text.strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[0] == f"{0.2:.17g}"
    assert first[2] == "product"
    assert len(first) == len(CSV_HEADER.split(","))


def test_json_mirror_includes_error_rows():
    cfg = StudyConfig(shape={"interval": [0.0, 1.0]}, deltas=(8.0, 0.2),
                      case="linear_x")
    rep = run_delta_sweep(cfg)
    doc = report_json_dict(rep)
    assert len(doc["rows"]) == 2
    assert "error" in doc["rows"][0]
    assert "l2_error" in doc["rows"][1]
    assert doc["environment"]["case"] == "linear_x"


def test_output_files_written(tmp_path):
    import dataclasses
    csv_path = tmp_path / "sweep.csv"
    json_path = tmp_path / "sweep.json"
    cfg = dataclasses.replace(LINEAR_CFG, deltas=(0.2,),
                              out_csv=str(csv_path), out_json=str(json_path))
    run_delta_sweep(cfg)
    assert csv_path.read_text().startswith(CSV_HEADER)
    doc = json.loads(json_path.read_text())
    assert len(doc["rows"]) == 1


# -------------------------------------------------------- penalty compare

def test_compare_penalties_distances_shrink():
    cfg = StudyConfig(shape={"interval": [0.0, 1.0]}, deltas=(0.2, 0.1),
                      case="linear_x")
    rep = compare_penalties(cfg, ["product", "wang"])
    assert len(rep.rows) == 4
    dist = rep.environment["pairwise_l2_distances"]["product|wang"]
    assert dist[repr(0.1)] < dist[repr(0.2)] < 0.05
    assert rep.environment["variants"] == ["product", "wang"]


def test_compare_requires_a_variant():
    with pytest.raises(ConfigError):
        compare_penalties(LINEAR_CFG, [])


def test_compare_same_variant_gives_zero_distance():
    cfg = StudyConfig(shape={"interval": [0.0, 1.0]}, deltas=(0.2,),
                      case="linear_x")
    rep = compare_penalties(cfg, ["product", "product"])
    dist = rep.environment["pairwise_l2_distances"]["product|product"]
    assert dist[repr(0.2)] == 0.0


# ------------------------------------------------------------- coercivity

def test_coercivity_interval_fixture():
    mesh = build_mesh({"interval": [0.0, 1.0]}, 0.05)
    rep = coercivity_probe(mesh, PenaltySpec("product", QUARTIC), QUARTIC,
                           0.2, trials=20, seed=7)
    # pilot with this seed measured min_ratio 7.11; keep 2x margin
    assert rep.min_ratio >= 3.5
    assert rep.skipped == 0
    assert len(rep.ratios) == 20
    assert all(r > 0 for r in rep.ratios)
    assert rep.c_n == pytest.approx(rep.min_ratio * 0.04, rel=1e-12)


def test_coercivity_cn_stable_under_horizon_halving():
    reports = []
    for delta in (0.2, 0.1):
        mesh = build_mesh({"interval": [0.0, 1.0]}, delta / 4.0)
        reports.append(coercivity_probe(
            mesh, PenaltySpec("product", QUARTIC), QUARTIC, delta,
            trials=20, seed=7))
    ratio = reports[1].c_n / reports[0].c_n
    assert 0.5 <= ratio <= 2.0


def test_coercivity_requires_ten_trials():
    mesh = build_mesh({"interval": [0.0, 1.0]}, 0.05)
    with pytest.raises(ConfigError):
        coercivity_probe(mesh, PenaltySpec("product", QUARTIC), QUARTIC,
                         0.2, trials=5)


class ZeroRng:
    def standard_normal(self, n):
        return np.zeros(n)


def test_coercivity_all_degenerate_probes_error(monkeypatch):
    mesh = build_mesh({"interval": [0.0, 1.0]}, 0.05)
    monkeypatch.setattr(np.random, "default_rng", lambda seed=None: ZeroRng())
    with pytest.raises(ConfigError) as exc:
        coercivity_probe(mesh, PenaltySpec("product", QUARTIC), QUARTIC,
                         0.2, trials=10)
    assert "degenerate" in str(exc.value)


class MixedRng:
    """First draw is all zero (degenerate), the rest are genuine."""

    def __init__(self, inner):
        self.calls = 0
        self.inner = inner

    def standard_normal(self, n):
        self.calls += 1
        if self.calls == 1:
            return np.zeros(n)
        return self.inner.standard_normal(n)


def test_coercivity_skips_degenerate_probes(monkeypatch):
    mesh = build_mesh({"interval": [0.0, 1.0]}, 0.05)
    inner = np.random.default_rng(3)
    monkeypatch.setattr(np.random, "default_rng",
                        lambda seed=None: MixedRng(inner))
    rep = coercivity_probe(mesh, PenaltySpec("product", QUARTIC),
                           QUARTIC, 0.2, trials=10)
    assert rep.skipped == 1
    assert len(rep.ratios) == 9


class SpikeRng:
    """Field visible to the penalty kernel but not to a narrower
    mollifier: nonzero only at nodes 0.125 and 0.875 of the h=0.05
    interval mesh."""

    def standard_normal(self, n):
        u = np.zeros(n)
        u[2] = 1.0       # x = 0.125
        u[n - 3] = 1.0   # x = 0.875
        return u


def test_coercivity_infinite_ratio_when_trace_vanishes(monkeypatch):
    # penalty radius 0.2 sees the spikes; mollifier radius 0.1 does not
    mesh = build_mesh({"interval": [0.0, 1.0]}, 0.05)
    narrow = KernelSpec("narrow",
                        lambda s: np.maximum(1.0 - np.asarray(s), 0.0) ** 2,
                        0.5)
    monkeypatch.setattr(np.random, "default_rng", lambda seed=None: SpikeRng())
    rep = coercivity_probe(mesh, PenaltySpec("product", QUARTIC), narrow,
                           0.2, trials=10)
    assert np.isinf(rep.min_ratio)
    assert rep.skipped == 0
