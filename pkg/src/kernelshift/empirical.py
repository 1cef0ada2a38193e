"""Monte Carlo kernel ridge regression against which theory is checked.

Two experiment styles are supported: discrete problems where train and
test measures live on the atoms of one dataset, and continuous problems
where fresh inputs are drawn each trial and the error is evaluated on a
fixed seeded test sample.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._rng import rng_from
from .kernels import gram
from .measures import DiscreteMeasure

__all__ = [
    "KRRSolution",
    "EmpiricalPoint",
    "krr_solve",
    "discrete_trial_error",
    "run_learning_curve",
    "run_continuous_curve",
    "compare_report",
    "EMPIRICAL_COLUMNS",
]

EMPIRICAL_COLUMNS = ("P", "Eg_mean", "Eg_std", "Eg_stderr", "trials")

RIDGELESS_RCOND = 1e-10
MAX_GRAM_BYTES = 2**31


@dataclass(frozen=True)
class KRRSolution:
    """Dual coefficients of one fit plus conditioning diagnostics."""

    coef: np.ndarray               # (P, C)
    rank: int                      # effective rank used by the solver
    residual: float                # max |(K + lam I) coef - y| over entries
    predictions: np.ndarray | None = None   # K_cross coef when requested


@dataclass(frozen=True)
class EmpiricalPoint:
    P: int
    Eg_mean: float
    Eg_std: float
    Eg_stderr: float
    trials: int


def krr_solve(K_train, y_train, lam, K_cross=None):
    """Fit kernel ridge regression, optionally predicting at new points.

    Solves (K_train + lam I) coef = y_train. Positive lam uses a
    Cholesky factorization; lam = 0 falls back to a pseudoinverse so
    that duplicate sample points (kernel matrices of deficient rank)
    yield the minimum-norm interpolant, with the rank reported. When
    K_cross (Q x P) is given the returned solution carries the Q x C
    predictions K_cross @ coef.
    """
    K_train = np.asarray(K_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.float64)
    y2 = y[:, None] if y.ndim == 1 else y
    P = K_train.shape[0]
    if K_train.shape != (P, P):
        raise ValueError("training kernel matrix must be square")
    if y2.shape[0] != P:
        raise ValueError("label count must match kernel size")
    if lam < 0:
        raise ValueError("ridge must be nonnegative")
    if K_train.nbytes > MAX_GRAM_BYTES:
        raise ValueError(
            f"training Gram matrix needs {K_train.nbytes / 1e9:.1f} GB, "
            f"above the {MAX_GRAM_BYTES / 1e9:.1f} GB budget")
    if lam > 0:
        A = K_train + lam * np.eye(P)
        c, low = linalg.cho_factor(A, lower=True, check_finite=False)
        coef = linalg.cho_solve((c, low), y2, check_finite=False)
        rank = P
    else:
        A = K_train
        coef, _, rank, _ = np.linalg.lstsq(A, y2, rcond=RIDGELESS_RCOND)
    resid = float(np.max(np.abs(A @ coef - y2))) if P else 0.0
    preds = None
    if K_cross is not None:
        K_cross = np.asarray(K_cross, dtype=np.float64)
        preds = K_cross @ coef
    return KRRSolution(coef=coef, rank=int(rank), residual=resid,
                       predictions=preds)


def discrete_trial_error(K, Y, train_measure, test_measure, P, lam, noise,
                         rng):
    """One KRR draw on a discrete problem; returns the test-measure error."""
    M = K.shape[0]
    Y2 = Y[:, None] if Y.ndim == 1 else Y
    idx = rng.choice(M, size=P, replace=True, p=train_measure.masses)
    labels = Y2[idx]
    if noise > 0:
        labels = labels + np.sqrt(noise) * rng.standard_normal(labels.shape)
    sol = krr_solve(K[np.ix_(idx, idx)], labels, lam)
    preds = K[:, idx] @ sol.coef
    return float(np.sum(test_measure.masses[:, None] * (preds - Y2) ** 2))


def _curve_from_errors(P, errs):
    errs = np.asarray(errs, dtype=np.float64)
    n = errs.shape[0]
    std = float(errs.std(ddof=1)) if n > 1 else 0.0
    return EmpiricalPoint(P=int(P), Eg_mean=float(errs.mean()), Eg_std=std,
                          Eg_stderr=std / np.sqrt(n) if n > 1 else 0.0,
                          trials=n)


def _run_trials(task, P_values, trials, threads):
    """task(P, t) -> float, keyed so results are independent of scheduling."""
    out = []
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for P in P_values:
                errs = list(pool.map(lambda t: task(P, t), range(trials)))
                out.append(_curve_from_errors(P, errs))
    else:
        for P in P_values:
            errs = [task(P, t) for t in range(trials)]
            out.append(_curve_from_errors(P, errs))
    return out


def run_learning_curve(K, Y, train_measure, test_measure, P_values, lam,
                       noise, trials, seed, threads=1):
    """Monte Carlo learning curve on a discrete problem.

    Every trial draws its own generator from (seed, P, trial index), so
    results are identical whatever the thread count or evaluation order.
    """
    K = np.asarray(K, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if not isinstance(train_measure, DiscreteMeasure):
        train_measure = DiscreteMeasure(np.asarray(train_measure, float))
    if not isinstance(test_measure, DiscreteMeasure):
        test_measure = DiscreteMeasure(np.asarray(test_measure, float))

    def task(P, t):
        rng = rng_from(seed, "trial", P, t)
        return discrete_trial_error(K, Y, train_measure, test_measure,
                                    int(P), lam, noise, rng)

    return _run_trials(task, P_values, trials, threads)


def run_continuous_curve(kernel_spec, sample_train, target_fn, test_X,
                         P_values, lam, noise, trials, seed, threads=1,
                         test_weights=None):
    """Monte Carlo learning curve with fresh inputs every trial.

    sample_train(rng, n) must return an (n, D) array of training inputs;
    target_fn maps an input array to noiseless labels. The error is the
    mean squared prediction error over the fixed test_X sample (or a
    weighted sum when test_weights is given).
    """
    test_X = np.asarray(test_X, dtype=np.float64)
    f_test = np.asarray(target_fn(test_X), dtype=np.float64)
    f_test = f_test[:, None] if f_test.ndim == 1 else f_test
    if test_weights is None:
        w = np.full(test_X.shape[0], 1.0 / test_X.shape[0])
    else:
        w = np.asarray(test_weights, dtype=np.float64)

    def task(P, t):
        rng = rng_from(seed, "trial", P, t)
        X = sample_train(rng, int(P))
        y = np.asarray(target_fn(X), dtype=np.float64)
        y = y[:, None] if y.ndim == 1 else y
        if noise > 0:
            y = y + np.sqrt(noise) * rng.standard_normal(y.shape)
        sol = krr_solve(gram(kernel_spec, X), y, lam)
        preds = gram(kernel_spec, test_X, X) @ sol.coef
        return float(np.sum(w[:, None] * (preds - f_test) ** 2))

    return _run_trials(task, P_values, trials, threads)


def compare_report(theory_Eg, empirical_points, band=3.0, theory_P=None):
    """Per-P z-scores of theory values against Monte Carlo means.

    z = (theory - mean) / stderr per grid point. Returns a dict with the
    rows, max |z|, the fraction of finite-theory points within the band,
    and an overall verdict. Divergent predictions (non-finite theory)
    are excluded from the fraction but kept in the rows. A stderr of
    zero with a mismatch is flagged as an infinite z.
    """
    theory_Eg = list(theory_Eg)
    empirical_points = list(empirical_points)
    if len(theory_Eg) != len(empirical_points):
        raise ValueError("theory and empirical grids have different sizes")
    if theory_P is not None:
        tp = [int(p) for p in theory_P]
        ep = [pt.P for pt in empirical_points]
        if tp != ep:
            raise ValueError(f"P grids differ: theory {tp} vs empirical {ep}")
    rows = []
    n_ok = 0
    n_finite = 0
    max_abs = 0.0
    for th, pt in zip(theory_Eg, empirical_points):
        if pt.Eg_stderr > 0:
            z = (th - pt.Eg_mean) / pt.Eg_stderr
        else:
            z = 0.0 if pt.Eg_mean == th else np.inf
        within = bool(np.isfinite(th) and np.isfinite(z) and abs(z) <= band)
        rows.append({
            "P": pt.P,
            "Eg_theory": float(th),
            "Eg_mean": pt.Eg_mean,
            "Eg_stderr": pt.Eg_stderr,
            "z": float(z),
            "within": within,
        })
        if np.isfinite(th):
            n_finite += 1
            n_ok += within
            if np.isfinite(z):
                max_abs = max(max_abs, abs(z))
            else:
                max_abs = np.inf
    frac = n_ok / n_finite if n_finite else float("nan")
    return {
        "band": float(band),
        "rows": rows,
        "max_abs_z": float(max_abs),
        "fraction_within": float(frac),
        "all_within": bool(n_finite > 0 and n_ok == n_finite),
    }
