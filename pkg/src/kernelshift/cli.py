"""Configuration-driven command line front end.

One command per process. Each run validates its JSON config against the
published schema, executes, and leaves a self-describing artifact
directory: output CSV/JSON files, the materialized config echo, and a
manifest with the config hash, seed and library versions. Identical
config and seed produce byte-identical artifacts whatever the thread
count.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical
divergence that prevents the requested computation.
"""

from __future__ import annotations

import argparse
import copy
import os
import sys

import numpy as np

from .closedform import (diagonal_linear_Eg, dot_product_kernel_spectrum,
                         gaussian_linear_Eg, general_linear_Eg,
                         mode_spectrum_Eg, ntk_sphere_Eg)
from .config import (ConfigError, RunConfig, build_dataset, build_kernel,
                     build_measure, parse_config, validate_document)
from .empirical import (EMPIRICAL_COLUMNS, EmpiricalPoint, compare_report,
                        run_learning_curve)
from .figures import CLOSED_COLUMNS, FIGURES, _closed_row
from .io import ArtifactDir, read_csv_columns
from .kernels import KernelSpec, gram, ntk_relu_eval
from .measures import from_logits
from .optimizer import (OptimizerConfig, optimize_test_measure,
                        optimize_train_measure, richardson_check)
from .spectral import (decomposition_cache_key, load_decomposition,
                       mercer_decompose, project_target, save_decomposition)
from .theory import (CURVE_COLUMNS, pointwise_error_density,
                     predict_Eg_dataset, prediction_row)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3

TRACE_COLUMNS = ("step", "Eg", "participation_ratio")


class DivergenceError(RuntimeError):
    """The requested computation sits in the diverging regime."""


def _decomposition(K, measure, rank_threshold, cache_dir):
    """Decompose, going through the on-disk cache when one is given."""
    if not cache_dir:
        return mercer_decompose(K, measure, rank_threshold)
    key = decomposition_cache_key(K, measure, rank_threshold)
    path = os.path.join(cache_dir, f"{key}.bin")
    if os.path.exists(path):
        return load_decomposition(path)
    dec = mercer_decompose(K, measure, rank_threshold)
    os.makedirs(cache_dir, exist_ok=True)
    save_decomposition(path, dec)
    return dec


def _dataset_problem(rc):
    ds = build_dataset(rc.section("dataset"), rc.seed)
    spec = build_kernel(rc.section("kernel"))
    K = gram(spec, ds.X)
    measures = rc.doc["measures"]
    p = build_measure(measures["train"], ds.M)
    pt = build_measure(measures["test"], ds.M)
    return ds, spec, K, p, pt


def _rank_threshold(rc):
    return float(rc.doc.get("theory", {}).get("rank_threshold", 1e-12))


def cmd_decompose(rc, art, threads, cache_dir):
    ds, spec, K, p, _ = _dataset_problem(rc)
    dec = _decomposition(K, p, _rank_threshold(rc), cache_dir)
    abar = project_target(dec, ds.Y)
    power = np.sum(abar**2, axis=1)
    total = float(power.sum())
    cum = np.cumsum(power) / total if total > 0 else np.zeros_like(power)
    rows = [(float(i), dec.eigenvalues[i], power[i], cum[i])
            for i in range(dec.n_modes)]
    art.write_csv("eigenvalues.csv",
                  ("index", "eta", "target_power", "cumulative_fraction"),
                  rows)
    art.write_json("decomposition.json", {
        "points": int(ds.M),
        "support_size": int(dec.support.shape[0]),
        "rank": int(dec.rank),
        "collapsed": int(dec.n_collapsed),
        "rank_threshold": dec.rank_threshold,
        "kernel": spec.kind,
    })
    return EXIT_OK


def cmd_theory_curve(rc, art, threads, cache_dir):
    ds, _, K, p, pt = _dataset_problem(rc)
    sec = rc.section("theory")
    if "P_grid" not in sec:
        raise ConfigError("theory-curve needs a P grid", "/theory/P_grid")
    dec = _decomposition(K, p, _rank_threshold(rc), cache_dir)
    rows = []
    n_diverged = 0
    for P in sec["P_grid"]:
        pred = predict_Eg_dataset(K, ds.Y, p, pt, P, sec["lambda"],
                                  sec["noise"], dec=dec)
        rows.append(prediction_row(P, pred))
        n_diverged += int(pred.state.diverged)
    art.write_csv("theory_curve.csv", CURVE_COLUMNS, rows)
    if n_diverged == len(rows):
        print("kernelshift: every grid point diverged (1 - gamma below "
              "tolerance)", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


def cmd_empirical_curve(rc, art, threads, cache_dir):
    ds, _, K, p, pt = _dataset_problem(rc)
    sec = rc.section("empirical")
    if "P_grid" not in sec:
        raise ConfigError("empirical-curve needs a P grid",
                          "/empirical/P_grid")
    points = run_learning_curve(K, ds.Y, p, pt, sec["P_grid"],
                                sec["lambda"], sec["noise"], sec["trials"],
                                rc.seed, threads=threads)
    art.write_csv("empirical_curve.csv", EMPIRICAL_COLUMNS,
                  [(pt_.P, pt_.Eg_mean, pt_.Eg_std, pt_.Eg_stderr,
                    pt_.trials) for pt_ in points])
    return EXIT_OK


def _optimizer_config(sec, target):
    return OptimizerConfig(
        P_budget=int(sec["P_budget"]),
        lam=float(sec["lambda"]),
        noise=float(sec["noise"]),
        learning_rate=float(sec["learning_rate"]),
        steps=int(sec["steps"]),
        mode=sec["mode"],
        target=target,
        fd_step=float(sec["fd_step"]),
        convergence_tol=float(sec["convergence_tol"]),
        backtracking=bool(sec["backtracking"]),
    )


def _write_trace(art, ds, trace):
    rows = [(float(i), trace.Eg[i], trace.participation[i])
            for i in range(len(trace.Eg))]
    art.write_csv("trace.csv", TRACE_COLUMNS, rows)
    masses = trace.final_measure.masses
    art.write_json("final_measure.json",
                   {str(int(ds.ids[i])): float(masses[i])
                    for i in range(ds.M)})
    order = np.argsort(-masses, kind="stable")
    art.write_csv("sorted_measure.csv", ("rank", "id", "mass"),
                  [(float(r), float(ds.ids[i]), masses[i])
                   for r, i in enumerate(order)])
    art.write_json("optimize.json", {
        "converged": bool(trace.converged),
        "message": trace.message,
        "steps_accepted": int(len(trace.Eg) - 1),
        "Eg_initial": float(trace.Eg[0]),
        "Eg_final": float(trace.Eg[-1]),
        "participation_final": float(trace.participation[-1]),
    })


def cmd_optimize_train(rc, art, threads, cache_dir):
    ds, spec, K, _, pt = _dataset_problem(rc)
    cfg = _optimizer_config(rc.section("optimizer"), "train_measure")
    try:
        trace = optimize_train_measure(ds, spec, pt, cfg, threads=threads,
                                       K=K)
    except ValueError as exc:
        if "diverge" in str(exc):
            raise DivergenceError(str(exc))
        raise
    _write_trace(art, ds, trace)
    return EXIT_OK


def cmd_optimize_test(rc, art, threads, cache_dir):
    ds, _, K, p, _ = _dataset_problem(rc)
    cfg = _optimizer_config(rc.section("optimizer"), "test_measure")
    dec = _decomposition(K, p, _rank_threshold(rc), cache_dir)
    abar = project_target(dec, ds.Y)
    try:
        trace = optimize_test_measure(dec, abar, cfg, Y=ds.Y)
    except ValueError as exc:
        if "diverge" in str(exc):
            raise DivergenceError(str(exc))
        raise
    _write_trace(art, ds, trace)
    return EXIT_OK


def _closed_form_results(sec):
    model = sec["model"]
    if "P_grid" not in sec:
        raise ConfigError("closed-form needs a P grid",
                          "/closed_form/P_grid")
    P_grid = sec["P_grid"]
    lam = float(sec["lambda"])
    noise = float(sec["noise"])

    def need(*keys):
        for key in keys:
            if key not in sec:
                raise ConfigError(f"model '{model}' needs '{key}'",
                                  f"/closed_form/{key}")

    if model == "gaussian_linear":
        need("beta", "covariance", "covariance_tilde")
        beta = np.asarray(sec["beta"], dtype=float)
        C = np.asarray(sec["covariance"], dtype=float)
        Ct = np.asarray(sec["covariance_tilde"], dtype=float)
        return P_grid, [gaussian_linear_Eg(beta, C, Ct, P, lam, noise)
                        for P in P_grid]
    if model == "diagonal_linear":
        need("beta", "D", "M_r")
        beta = np.asarray(sec["beta"], dtype=float)
        return P_grid, [
            diagonal_linear_Eg(P, int(sec["D"]), int(sec["M_r"]), beta,
                               sec["sigma2"], sec["sigma2_tilde"], lam,
                               noise) for P in P_grid]
    if model == "general_linear":
        need("beta", "M", "M_r", "M_s")
        beta = np.asarray(sec["beta"], dtype=float)
        return P_grid, [
            general_linear_Eg(P, int(sec["M"]), int(sec["M_r"]),
                              int(sec["M_s"]), beta, sec["sigma2"],
                              sec["sigma2_tilde"], lam, noise)
            for P in P_grid]
    if model == "ntk_sphere":
        need("D", "depth", "k_max", "abar_sq")
        D = int(sec["D"])
        k_max = int(sec["k_max"])
        eta, degen = dot_product_kernel_spectrum(
            KernelSpec("ntk_relu", depth=int(sec["depth"])), D, k_max)
        abar_sq = np.zeros(k_max + 1)
        given = np.asarray(sec["abar_sq"], dtype=float)
        abar_sq[:given.shape[0]] = given
        R = float(sec["radius_train"])
        Rt = float(sec["radius_test"])
        if "k_stage" in sec:
            return P_grid, [
                ntk_sphere_Eg(P, D, int(sec["k_stage"]), eta * degen,
                              abar_sq, lam, noise, radius_train=R,
                              radius_test=Rt) for P in P_grid]
        trace = float(ntk_relu_eval(int(sec["depth"]), np.array(1.0),
                                    np.array(1.0), np.array(1.0)))
        tail = max(trace - float(np.sum(eta * degen)), 0.0) * R**2
        return P_grid, [
            mode_spectrum_Eg(R**2 * eta, degen, abar_sq, P, lam, noise,
                             overlap_scale=(Rt / R)**2, tail_eta=tail)
            for P in P_grid]
    raise ConfigError(f"unknown closed-form model '{model}'",
                      "/closed_form/model")


def cmd_closed_form(rc, art, threads, cache_dir):
    P_grid, results = _closed_form_results(rc.section("closed_form"))
    art.write_csv("closed_form_curve.csv", CLOSED_COLUMNS,
                  [_closed_row(P, r) for P, r in zip(P_grid, results)])
    if all(r.diverged for r in results):
        print("kernelshift: every grid point diverged (1 - gamma below "
              "tolerance)", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


def cmd_spectrum(rc, art, threads, cache_dir):
    spec = build_kernel(rc.section("kernel"))
    sec = rc.section("spectrum")
    eta, degen = dot_product_kernel_spectrum(spec, int(sec["D"]),
                                             int(sec["k_max"]),
                                             n_quad=int(sec["n_quad"]))
    art.write_csv("spectrum.csv", ("k", "eta", "degeneracy"),
                  [(float(k), eta[k], degen[k])
                   for k in range(len(eta))])
    return EXIT_OK


def cmd_compare(rc, art, threads, cache_dir):
    sec = rc.section("compare")
    theory = read_csv_columns(sec["theory_csv"])
    empirical = read_csv_columns(sec["empirical_csv"])
    for name, cols in (("theory", theory), ("empirical", empirical)):
        if "P" not in cols:
            raise ConfigError(f"{name} CSV lacks a P column",
                              "/compare")
    if "Eg" not in theory:
        raise ConfigError("theory CSV lacks an Eg column", "/compare")
    points = [EmpiricalPoint(P=int(P), Eg_mean=m, Eg_std=s, Eg_stderr=se,
                             trials=int(t))
              for P, m, s, se, t in zip(empirical["P"],
                                        empirical["Eg_mean"],
                                        empirical["Eg_std"],
                                        empirical["Eg_stderr"],
                                        empirical["trials"])]
    report = compare_report(list(theory["Eg"]), points,
                            band=float(sec["band"]),
                            theory_P=list(theory["P"]))
    art.write_json("compare.json", report)
    return EXIT_OK


def cmd_gradcheck(rc, art, threads, cache_dir):
    ds, _, K, p, pt = _dataset_problem(rc)
    sec = rc.section("optimizer")
    P = int(sec["P_budget"])
    lam = float(sec["lambda"])
    noise = float(sec["noise"])
    h = float(sec["fd_step"])

    def train_loss(z):
        return predict_Eg_dataset(K, ds.Y, from_logits(z), pt, P, lam,
                                  noise).Eg

    z0 = np.zeros(ds.M)
    rich = richardson_check(train_loss, z0, h=max(h, 1e-5),
                            threads=threads)

    dec = _decomposition(K, p, _rank_threshold(rc), cache_dir)
    abar = project_target(dec, ds.Y)
    c = pointwise_error_density(dec, abar, P, lam, noise, Y=ds.Y)

    def test_loss(zt):
        return float(np.sum(from_logits(zt).masses * c))

    masses0 = from_logits(z0).masses
    mean_c = float(np.sum(masses0 * c))
    analytic = masses0 * (c - mean_c)
    step = 1e-6
    fd = np.empty(ds.M)
    for i in range(ds.M):
        zp = z0.copy(); zp[i] += step
        zm = z0.copy(); zm[i] -= step
        fd[i] = (test_loss(zp) - test_loss(zm)) / (2.0 * step)
    scale = float(np.max(np.abs(analytic))) or 1.0
    rel = float(np.max(np.abs(fd - analytic)) / scale)

    art.write_json("gradcheck.json", {
        "train_fd_richardson": {"rel_err": rich, "tolerance": 1e-4,
                                "ok": bool(rich < 1e-4)},
        "test_measure_analytic": {"rel_err": rel, "tolerance": 1e-6,
                                  "ok": bool(rel < 1e-6)},
    })
    return EXIT_OK


def cmd_reproduce(rc, art, threads, cache_dir):
    figure = rc.figure
    summary = FIGURES[figure](art, rc.seed, threads=threads)
    art.write_json("summary.json", summary)
    return EXIT_OK


_HANDLERS = {
    "decompose": cmd_decompose,
    "theory-curve": cmd_theory_curve,
    "empirical-curve": cmd_empirical_curve,
    "optimize-train": cmd_optimize_train,
    "optimize-test": cmd_optimize_test,
    "closed-form": cmd_closed_form,
    "spectrum": cmd_spectrum,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
    "reproduce": cmd_reproduce,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="kernelshift",
        description="Learning-curve theory and measure optimization for "
                    "kernel regression under train/test distribution "
                    "shift.")
    parser.add_argument("--config", required=True,
                        help="path to a JSON run configuration")
    parser.add_argument("--out", default="out",
                        help="artifact output directory (default: ./out)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for trials and probes "
                             "(does not change results)")
    parser.add_argument("--cache", default=None,
                        help="directory for reusable decompositions")
    args = parser.parse_args(argv)

    try:
        rc = parse_config(args.config)
        if args.seed is not None:
            doc = copy.deepcopy(rc.doc)
            doc["seed"] = int(args.seed)
            validate_document(doc)
            rc = RunConfig(doc)
        threads = args.threads if args.threads is not None else rc.threads
        art = ArtifactDir(args.out)
        code = EXIT_OK
        try:
            code = _HANDLERS[rc.command](rc, art, threads, args.cache)
        except (DivergenceError, FloatingPointError) as exc:
            print(f"kernelshift: numerical divergence: {exc}",
                  file=sys.stderr)
            code = EXIT_DIVERGENCE
        art.echo_config(rc)
        art.write_manifest(rc)
        return code
    except ConfigError as exc:
        print(f"kernelshift: config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"kernelshift: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
