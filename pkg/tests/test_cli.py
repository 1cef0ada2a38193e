"""Command line front end: artifact contracts, exit codes, and
bit-for-bit reproducibility of every run."""

import json
import os

import numpy as np
import pytest

import kernelshift
from kernelshift.cli import main
from kernelshift.closedform import dot_product_kernel_spectrum
from kernelshift.io import read_csv_columns
from kernelshift.kernels import KernelSpec
from kernelshift.theory import CURVE_COLUMNS


def _base_doc():
    return {
        "dataset": {"synthetic": {"kind": "gaussian_diag", "n": 10,
                                  "variances": [1.0, 1.0, 0.5],
                                  "beta": [1.0, -0.5, 0.25]}},
        "kernel": {"kind": "rbf", "lengthscale": 1.5},
    }


def _run(tmp_path, doc, out="out", extra=(), name="cfg.json"):
    cfg = tmp_path / name
    cfg.write_text(json.dumps(doc))
    out_dir = tmp_path / out
    code = main(["--config", str(cfg), "--out", str(out_dir), *extra])
    return code, out_dir


def _read_dir(out_dir):
    files = {}
    for name in sorted(os.listdir(out_dir)):
        with open(os.path.join(out_dir, name), "rb") as fh:
            files[name] = fh.read()
    return files


def test_decompose_artifacts(tmp_path):
    doc = dict(_base_doc(), command="decompose")
    code, out = _run(tmp_path, doc)
    assert code == 0
    cols = read_csv_columns(out / "eigenvalues.csv")
    assert list(cols) == ["index", "eta", "target_power",
                          "cumulative_fraction"]
    assert np.all(np.diff(cols["eta"]) <= 0)
    assert cols["cumulative_fraction"][-1] == pytest.approx(1.0, abs=1e-12)
    info = json.load(open(out / "decomposition.json"))
    assert info["points"] == 10
    assert info["kernel"] == "rbf"
    assert set(info) >= {"points", "support_size", "rank", "collapsed",
                         "rank_threshold"}
    manifest = json.load(open(out / "manifest.json"))
    assert manifest["artifacts"] == sorted(manifest["artifacts"])
    assert "config.echo.json" in manifest["artifacts"]


def test_theory_curve_columns_and_17g_cells(tmp_path):
    doc = dict(_base_doc(), command="theory-curve",
               theory={"P_grid": [2, 4, 8], "lambda": 0.1, "noise": 0.01})
    code, out = _run(tmp_path, doc)
    assert code == 0
    cols = read_csv_columns(out / "theory_curve.csv")
    assert tuple(cols) == CURVE_COLUMNS
    assert np.all(np.isfinite(cols["Eg"]))
    assert np.all(cols["diverged"] == 0.0)
    # float cells must carry the full 17-significant-digit form
    lines = (out / "theory_curve.csv").read_text().strip().split("\n")
    kappa_idx = CURVE_COLUMNS.index("kappa")
    for line in lines[1:]:
        cell = line.split(",")[kappa_idx]
        assert format(float(cell), ".17g") == cell


def test_empirical_curve_columns(tmp_path):
    doc = dict(_base_doc(), command="empirical-curve",
               theory={"lambda": 0.1, "noise": 0.01},
               empirical={"P_grid": [2, 4], "trials": 8})
    code, out = _run(tmp_path, doc)
    assert code == 0
    cols = read_csv_columns(out / "empirical_curve.csv")
    assert list(cols) == ["P", "Eg_mean", "Eg_std", "Eg_stderr", "trials"]
    assert np.all(cols["trials"] == 8.0)


def test_optimize_train_artifacts(tmp_path):
    doc = dict(_base_doc(), command="optimize-train",
               optimizer={"P_budget": 3, "lambda": 0.1, "steps": 5})
    code, out = _run(tmp_path, doc)
    assert code == 0
    trace = read_csv_columns(out / "trace.csv")
    assert list(trace) == ["step", "Eg", "participation_ratio"]
    assert np.all(np.diff(trace["Eg"]) < 0)
    final = json.load(open(out / "final_measure.json"))
    assert len(final) == 10
    assert sum(final.values()) == pytest.approx(1.0, abs=1e-12)
    ranked = read_csv_columns(out / "sorted_measure.csv")
    assert np.all(np.diff(ranked["mass"]) <= 0)
    report = json.load(open(out / "optimize.json"))
    assert report["Eg_final"] <= report["Eg_initial"]
    assert report["steps_accepted"] == len(trace["Eg"]) - 1
    assert set(report) == {"converged", "message", "steps_accepted",
                           "Eg_initial", "Eg_final", "participation_final"}


def test_optimize_test_artifacts(tmp_path):
    doc = dict(_base_doc(), command="optimize-test",
               optimizer={"P_budget": 3, "lambda": 0.1, "steps": 40})
    code, out = _run(tmp_path, doc)
    assert code == 0
    report = json.load(open(out / "optimize.json"))
    assert report["Eg_final"] < report["Eg_initial"]
    # descent onto the cheapest atoms shrinks the effective support
    assert report["participation_final"] < 10.0


def test_closed_form_curve(tmp_path):
    doc = {"command": "closed-form",
           "closed_form": {"model": "diagonal_linear", "D": 10, "M_r": 4,
                           "beta": [1.0] * 10, "lambda": 0.05,
                           "noise": 0.1, "P_grid": [2, 5, 20]}}
    code, out = _run(tmp_path, doc)
    assert code == 0
    cols = read_csv_columns(out / "closed_form_curve.csv")
    assert list(cols) == ["P", "Eg", "Eg_matched", "kappa", "gamma",
                          "gamma_prime", "irreducible", "diverged"]
    assert np.all(np.isfinite(cols["Eg"]))
    assert np.all(np.diff(cols["Eg"]) < 0)


def test_spectrum_golden(tmp_path):
    doc = {"command": "spectrum",
           "kernel": {"kind": "ntk_relu", "depth": 2},
           "spectrum": {"D": 10, "k_max": 5}}
    code, out = _run(tmp_path, doc)
    assert code == 0
    cols = read_csv_columns(out / "spectrum.csv")
    assert list(cols["k"]) == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    assert cols["degeneracy"][1] == 10.0
    eta, _ = dot_product_kernel_spectrum(KernelSpec("ntk_relu", depth=2),
                                         10, 5)
    np.testing.assert_allclose(cols["eta"], eta, rtol=1e-12)


def test_compare_pipeline(tmp_path):
    theory_doc = dict(_base_doc(), command="theory-curve",
                      theory={"P_grid": [2, 4], "lambda": 0.1,
                              "noise": 0.01})
    _, theory_out = _run(tmp_path, theory_doc, out="t", name="t.json")
    emp_doc = dict(_base_doc(), command="empirical-curve",
                   theory={"lambda": 0.1, "noise": 0.01},
                   empirical={"P_grid": [2, 4], "trials": 60})
    _, emp_out = _run(tmp_path, emp_doc, out="e", name="e.json")
    cmp_doc = {"command": "compare",
               "compare": {"theory_csv": str(theory_out /
                                             "theory_curve.csv"),
                           "empirical_csv": str(emp_out /
                                                "empirical_curve.csv")}}
    code, out = _run(tmp_path, cmp_doc, out="c", name="c.json")
    assert code == 0
    report = json.load(open(out / "compare.json"))
    assert report["band"] == 3.0
    assert len(report["rows"]) == 2
    assert {"P", "Eg_theory", "Eg_mean", "z", "within"} <= \
        set(report["rows"][0])


def test_compare_grid_mismatch_exits_2(tmp_path, capsys):
    theory_doc = dict(_base_doc(), command="theory-curve",
                      theory={"P_grid": [2, 4], "lambda": 0.1})
    _, theory_out = _run(tmp_path, theory_doc, out="t", name="t.json")
    emp_doc = dict(_base_doc(), command="empirical-curve",
                   theory={"lambda": 0.1},
                   empirical={"P_grid": [2, 5], "trials": 4})
    _, emp_out = _run(tmp_path, emp_doc, out="e", name="e.json")
    cmp_doc = {"command": "compare",
               "compare": {"theory_csv": str(theory_out /
                                             "theory_curve.csv"),
                           "empirical_csv": str(emp_out /
                                                "empirical_curve.csv")}}
    code, _ = _run(tmp_path, cmp_doc, out="c", name="c.json")
    assert code == 2
    assert "grids differ" in capsys.readouterr().err


def test_gradcheck_report(tmp_path):
    doc = dict(_base_doc(), command="gradcheck",
               optimizer={"P_budget": 3, "lambda": 0.1, "noise": 0.01})
    code, out = _run(tmp_path, doc)
    assert code == 0
    report = json.load(open(out / "gradcheck.json"))
    assert report["train_fd_richardson"]["ok"]
    assert report["train_fd_richardson"]["rel_err"] < 1e-4
    assert report["test_measure_analytic"]["ok"]
    assert report["test_measure_analytic"]["rel_err"] < 1e-6


def test_unknown_command_exits_2(tmp_path, capsys):
    code, _ = _run(tmp_path, {"command": "solve-everything"})
    assert code == 2
    assert "/command" in capsys.readouterr().err


def test_missing_section_exits_2(tmp_path, capsys):
    doc = dict(_base_doc(), command="theory-curve")
    code, _ = _run(tmp_path, doc)
    assert code == 2
    assert "/theory" in capsys.readouterr().err


def test_all_diverged_closed_form_exits_3(tmp_path, capsys):
    doc = {"command": "closed-form",
           "closed_form": {"model": "general_linear", "M": 10, "M_r": 10,
                           "M_s": 10, "beta": [1.0] * 10, "lambda": 0.0,
                           "noise": 0.1, "P_grid": [10]}}
    code, out = _run(tmp_path, doc)
    assert code == 3
    assert "diverged" in capsys.readouterr().err
    cols = read_csv_columns(out / "closed_form_curve.csv")
    assert cols["diverged"][0] == 1.0
    assert os.path.exists(out / "manifest.json")  # run is still recorded


def test_optimizer_divergent_start_exits_3(tmp_path, capsys):
    doc = {"command": "optimize-train",
           "dataset": {"synthetic": {"kind": "gaussian_diag", "n": 8,
                                     "variances": [1.0] * 8,
                                     "beta": [1.0] * 8}},
           "kernel": {"kind": "linear"},
           "optimizer": {"P_budget": 8, "lambda": 0.0, "steps": 3}}
    code, out = _run(tmp_path, doc)
    assert code == 3
    assert "diverge" in capsys.readouterr().err
    assert os.path.exists(out / "manifest.json")


def test_reruns_are_byte_identical(tmp_path):
    for idx, doc in enumerate((
            dict(_base_doc(), command="decompose"),
            dict(_base_doc(), command="theory-curve",
                 theory={"P_grid": [2, 4], "lambda": 0.1, "noise": 0.01}),
            dict(_base_doc(), command="empirical-curve",
                 theory={"lambda": 0.1},
                 empirical={"P_grid": [2, 4], "trials": 8}),
            dict(_base_doc(), command="optimize-test",
                 optimizer={"P_budget": 3, "lambda": 0.1, "steps": 10}))):
        code_a, out_a = _run(tmp_path, doc, out=f"a{idx}",
                             name=f"a{idx}.json")
        code_b, out_b = _run(tmp_path, doc, out=f"b{idx}",
                             name=f"b{idx}.json")
        assert code_a == code_b == 0
        assert _read_dir(out_a) == _read_dir(out_b)


def test_threads_flag_does_not_change_bytes(tmp_path):
    doc = dict(_base_doc(), command="empirical-curve",
               theory={"lambda": 0.1},
               empirical={"P_grid": [2, 4], "trials": 12})
    _, out1 = _run(tmp_path, doc, out="one", name="one.json")
    _, out4 = _run(tmp_path, doc, out="four", name="four.json",
                   extra=("--threads", "4"))
    assert _read_dir(out1) == _read_dir(out4)


def test_seed_override_is_echoed_and_rehashed(tmp_path):
    doc = dict(_base_doc(), command="decompose")
    _, out0 = _run(tmp_path, doc, out="s0", name="s0.json")
    _, out9 = _run(tmp_path, doc, out="s9", name="s9.json",
                   extra=("--seed", "9"))
    echo = json.load(open(out9 / "config.echo.json"))
    assert echo["seed"] == 9
    m0 = json.load(open(out0 / "manifest.json"))
    m9 = json.load(open(out9 / "manifest.json"))
    assert m9["seed"] == 9
    assert m0["config_sha256"] != m9["config_sha256"]


def test_decomposition_cache_roundtrip(tmp_path):
    doc = dict(_base_doc(), command="theory-curve",
               theory={"P_grid": [2, 4], "lambda": 0.1})
    cache = tmp_path / "cache"
    _, plain = _run(tmp_path, doc, out="plain", name="p.json")
    _, warm = _run(tmp_path, doc, out="warm", name="w.json",
                   extra=("--cache", str(cache)))
    assert len(os.listdir(cache)) == 1
    _, hot = _run(tmp_path, doc, out="hot", name="h.json",
                  extra=("--cache", str(cache)))
    assert _read_dir(plain) == _read_dir(warm) == _read_dir(hot)


def test_reproduce_bundled_config(tmp_path):
    cfg = os.path.join(os.path.dirname(kernelshift.__file__), "configs",
                       "figSI5.json")
    out = tmp_path / "si5"
    code = main(["--config", cfg, "--out", str(out)])
    assert code == 0
    summary = json.load(open(out / "summary.json"))
    assert summary["rect"]["collapsed_within_kernel"]
    assert not summary["gauss"]["collapsed_within_kernel"]
    manifest = json.load(open(out / "manifest.json"))
    assert manifest["figure"] == "figSI5"
