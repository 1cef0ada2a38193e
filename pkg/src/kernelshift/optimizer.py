"""Gradient optimization of training and test measures against theory.

The training measure enters the error prediction through the spectral
decomposition, so its gradient is taken by finite differences on the
softmax logits. The test measure enters linearly through the pointwise
error density, so its gradient is analytic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .measures import DiscreteMeasure, Dataset, from_logits
from .kernels import gram
from .spectral import mercer_decompose, overlap, project_target
from .theory import pointwise_error_density, predict_Eg

__all__ = [
    "OptimizerConfig",
    "OptimizationTrace",
    "participation_ratio",
    "get_loss",
    "fd_gradient",
    "optimize_train_measure",
    "optimize_test_measure",
]

MAX_BACKTRACKS = 20


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for measure optimization.

    P_budget is the sample size the error is predicted at; mode picks
    gradient descent (beneficial measures) or ascent (detrimental ones).
    Setting backtracking False recovers plain fixed-rate steps.
    """

    P_budget: int
    lam: float
    noise: float = 0.0
    learning_rate: float = 1.0
    steps: int = 2000
    mode: str = "descent"
    target: str = "train_measure"
    fd_step: float = 1e-5
    convergence_tol: float = 1e-6
    backtracking: bool = True

    def __post_init__(self):
        if self.P_budget < 1:
            raise ValueError("P_budget must be at least 1")
        if self.lam < 0 or self.noise < 0:
            raise ValueError("ridge and noise must be nonnegative")
        if self.learning_rate <= 0 or self.steps < 1 or self.fd_step <= 0:
            raise ValueError("learning_rate, steps and fd_step must be "
                             "positive")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.mode not in ("descent", "ascent"):
            raise ValueError("mode must be 'descent' or 'ascent'")
        if self.target not in ("train_measure", "test_measure"):
            raise ValueError("target must be 'train_measure' or "
                             "'test_measure'")


@dataclass
class OptimizationTrace:
    """Accepted iterates of one optimization run."""

    logits: np.ndarray              # (n_accepted + 1, M) including start
    Eg: np.ndarray                  # (n_accepted + 1,)
    participation: np.ndarray       # (n_accepted + 1,)
    final_measure: DiscreteMeasure
    converged: bool
    message: str = ""

    @property
    def measures(self):
        return [from_logits(z) for z in self.logits]


def participation_ratio(measure):
    """Effective number of atoms carrying mass, 1 / sum p^2, in [1, M]."""
    masses = measure.masses if isinstance(measure, DiscreteMeasure) \
        else np.asarray(measure, dtype=np.float64)
    return float(1.0 / np.sum(masses**2))


def get_loss(z, K, Y, lam, P, noise=0.0):
    """Predicted error for training logits z against the uniform test
    measure on the same atoms. Returns +inf on divergence."""
    z = np.asarray(z, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    M = K.shape[0]
    p = from_logits(z)
    ptilde = DiscreteMeasure(np.full(M, 1.0 / M))
    dec = mercer_decompose(K, p)
    abar = project_target(dec, Y)
    O = overlap(dec, ptilde)
    from .theory import residual_moments
    residual = residual_moments(dec, abar, Y, ptilde)
    pred = predict_Eg(dec, abar, O, P, lam, noise, residual=residual)
    return float(pred.Eg)


def fd_gradient(loss, z, h, scheme="central", threads=1):
    """Finite-difference gradient of a scalar loss over logits.

    scheme "central" uses (L(z+h e_i) - L(z-h e_i)) / 2h; "forward"
    uses (L(z+h e_i) - L(z)) / h. Probes are independent and may be
    evaluated by a thread pool; the assembled gradient does not depend
    on scheduling.
    """
    z = np.asarray(z, dtype=np.float64)
    M = z.shape[0]
    if scheme == "central":
        probes = []
        for i in range(M):
            zp = z.copy(); zp[i] += h
            zm = z.copy(); zm[i] -= h
            probes.extend((zp, zm))
    elif scheme == "forward":
        probes = []
        for i in range(M):
            zp = z.copy(); zp[i] += h
            probes.append(zp)
        probes.append(z)
    else:
        raise ValueError("scheme must be 'central' or 'forward'")
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(loss, probes))
    else:
        vals = [loss(zp) for zp in probes]
    vals = np.asarray(vals, dtype=np.float64)
    if scheme == "central":
        return (vals[0::2] - vals[1::2]) / (2.0 * h)
    return (vals[:-1] - vals[-1]) / h


def richardson_check(loss, z, h=1e-4, threads=1):
    """Step-halving consistency of the central-difference gradient.

    Compares the h/2 gradient with its Richardson extrapolation from
    the h and h/2 stencils; a small relative deviation certifies the
    stencil operates in its convergent regime rather than being
    dominated by roundoff or nonsmoothness.
    """
    g1 = fd_gradient(loss, z, h, scheme="central", threads=threads)
    g2 = fd_gradient(loss, z, h / 2.0, scheme="central", threads=threads)
    extrap = (4.0 * g2 - g1) / 3.0
    scale = float(np.max(np.abs(extrap)))
    dev = float(np.max(np.abs(g2 - extrap)))
    return dev / scale if scale > 0 else dev


def _iterate(z0, loss, grad, config):
    """Shared step loop: gradient steps with optional backtracking."""
    sign = 1.0 if config.mode == "descent" else -1.0
    z = np.asarray(z0, dtype=np.float64).copy()
    current = loss(z)
    if not np.isfinite(current) and config.mode == "descent":
        raise ValueError("starting point already diverges")
    zs, egs = [z.copy()], [current]
    converged = False
    message = "step budget exhausted"
    for _ in range(config.steps):
        g = grad(z)
        rate = config.learning_rate
        accepted = False
        for _ in range(MAX_BACKTRACKS + 1):
            z_new = z - sign * rate * g
            val = loss(z_new)
            better = (val < current) if config.mode == "descent" \
                else (np.isfinite(val) and val > current)
            if better:
                accepted = True
                break
            if not config.backtracking:
                break
            rate *= 0.5
        if not accepted:
            message = "no improving step within backtracking budget"
            break
        step_size = float(np.max(np.abs(z_new - z)))
        z, current = z_new, val
        zs.append(z.copy())
        egs.append(current)
        if step_size < config.convergence_tol:
            converged = True
            message = "step size below convergence tolerance"
            break
    logits = np.asarray(zs)
    egs = np.asarray(egs)
    parts = np.array([participation_ratio(from_logits(zz)) for zz in logits])
    return OptimizationTrace(
        logits=logits, Eg=egs, participation=parts,
        final_measure=from_logits(logits[-1]), converged=converged,
        message=message)


def optimize_train_measure(dataset, kernel_spec, test_measure, config,
                           threads=1, K=None):
    """Optimize the training measure of a discrete problem.

    dataset may be a Dataset or a plain (X, Y) pair; a precomputed Gram
    matrix can be passed to skip the kernel evaluation. The test measure
    stays fixed; logits start at zero (uniform measure).
    """
    if config.target != "train_measure":
        raise ValueError("config.target must be 'train_measure'")
    if isinstance(dataset, Dataset):
        X, Y = dataset.X, dataset.Y
    else:
        X, Y = dataset
    K = gram(kernel_spec, X) if K is None else np.asarray(K, float)
    Y = np.asarray(Y, dtype=np.float64)
    M = K.shape[0]
    if not isinstance(test_measure, DiscreteMeasure):
        test_measure = DiscreteMeasure(np.asarray(test_measure, float))

    from .theory import predict_Eg_dataset

    def loss(z):
        p = from_logits(z)
        pred = predict_Eg_dataset(K, Y, p, test_measure, config.P_budget,
                                  config.lam, config.noise)
        return float(pred.Eg)

    def grad(z):
        return fd_gradient(loss, z, config.fd_step, "central", threads)

    return _iterate(np.zeros(M), loss, grad, config)


def optimize_test_measure(dec, abar, config, Y=None):
    """Optimize the test measure with the training side held fixed.

    The error is linear in the test masses with coefficients given by
    the pointwise error density, so the softmax gradient is analytic:
    d Eg / d z_nu = p_nu (c_nu - sum_mu p_mu c_mu). Descent piles mass
    onto the smallest density value, ascent onto the largest; ties give
    convex mixtures of the tied atoms.
    """
    if config.target != "test_measure":
        raise ValueError("config.target must be 'test_measure'")
    c = pointwise_error_density(dec, abar, config.P_budget, config.lam,
                                config.noise, Y=Y)

    def loss(z):
        return float(np.dot(from_logits(z).masses, c))

    def grad(z):
        p = from_logits(z).masses
        return p * (c - np.dot(p, c))

    return _iterate(np.zeros(c.shape[0]), loss, grad, config)
