"""Closed-form error curves for three analytically solvable models.

Covers linear regression on anisotropic Gaussians (sample-wise double
descent and its removal by the optimal ridge), a rank-limited student
kernel that either resolves the teacher or hits an irreducible floor,
and a depth-two relu network kernel on spheres of different radii.
"""

import numpy as np

from kernelshift.closedform import (diagonal_linear_Eg,
                                    dot_product_kernel_spectrum,
                                    general_linear_Eg, mode_spectrum_Eg,
                                    optimal_ridge)
from kernelshift.kernels import KernelSpec, ntk_relu_eval


def ridge_section():
    D, M_r, noise = 120, 40, 0.1
    beta = np.ones(D) / np.sqrt(D)
    lam_star = optimal_ridge(M_r, D, noise)
    print(f"linear model, D={D}, training support rank M_r={M_r}, "
          f"noise {noise}")
    print(f"optimal ridge lambda* = {lam_star:.6f}")
    print(f"{'P':>5} {'Eg, lambda=1e-4':>16} {'Eg, lambda*':>12}")
    for P in [5, 10, 20, 30, 40, 50, 80, 160, 320]:
        small = diagonal_linear_Eg(P, D, M_r, beta, 1.0, 1.0, 1e-4,
                                   noise=noise)
        best = diagonal_linear_Eg(P, D, M_r, beta, 1.0, 1.0, lam_star,
                                  noise=noise)
        tag = "  <- spike at P = M_r" if P == M_r else ""
        print(f"{P:>5} {small.Eg:>16.4f} {best.Eg:>12.4f}{tag}")


def expressivity_section():
    M, M_r = 20, 30
    beta = np.ones(M_r)
    print(f"\nstudent kernel of rank M={M}, teacher uses M_r={M_r} "
          f"directions")
    for M_s in (15, 30):
        r = general_linear_Eg(4000, M, M_r, M_s, beta, 1.0, 1.0, 1e-2)
        print(f"  teacher support M_s={M_s}: Eg at P=4000 is "
              f"{r.Eg:.3e}, irreducible floor {r.irreducible:.3e}")


def ntk_section():
    D, depth, k_max = 10, 2, 30
    spec = KernelSpec("ntk_relu", depth=depth)
    eta, degen = dot_product_kernel_spectrum(spec, D, k_max)
    abar_sq = np.zeros(k_max + 1)
    abar_sq[1] = 1.0
    trace = float(ntk_relu_eval(depth, np.array(1.0), np.array(1.0),
                                np.array(1.0)))
    tail = max(trace - float(np.sum(eta * degen)), 0.0)
    print(f"\nrelu network kernel on the sphere, D={D}, depth={depth}, "
          f"linear target")
    print(f"{'P':>5} {'Eg, test R=1.0':>15} {'Eg, test R=0.5':>15}")
    for P in [5, 10, 20, 40, 80, 160, 320]:
        rows = [mode_spectrum_Eg(eta, degen, abar_sq, P, 0.01, noise=0.05,
                                 overlap_scale=rt**2, tail_eta=tail).Eg
                for rt in (1.0, 0.5)]
        print(f"{P:>5} {rows[0]:>15.4f} {rows[1]:>15.4f}")


if __name__ == "__main__":
    ridge_section()
    expressivity_section()
    ntk_section()
