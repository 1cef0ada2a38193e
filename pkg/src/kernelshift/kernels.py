"""Kernel families and Gram matrices.

Supported kernels:

- linear:  K(x, x') = x.x' / D
- rbf:     K(x, x') = exp(-|x - x'|^2 / (2 ls^2))
- laplace: K(x, x') = exp(-|x - x'| / ls)         (Euclidean distance)
- fourier_bandlimited: 1-D band-limited kernel
           K(x, x') = sum_{k=1..n_modes} cos(k pi (x - x'))
- ntk_relu: analytic NTK of a bias-free fully connected ReLU network.

NTK convention (pinned by golden values in the tests): depth counts weight
layers, so depth 1 is the plain dot product.  Layer covariances use the
He-style factor-2 ReLU moments, which makes the diagonal exactly |x|^2 at
every layer and the kernel homogeneous of degree 2 in the inputs:

    kappa0(t) = (pi - arccos t) / pi
    kappa1(t) = (t (pi - arccos t) + sqrt(1 - t^2)) / pi
    S_1 = x.x',  Theta_1 = S_1
    S_l = |x||x'| kappa1(t_{l-1}),  Theta_l = S_l + Theta_{l-1} kappa0(t_{l-1})

with t_l = S_l / (|x||x'|) clamped to [-1, 1].  Golden values at unit norms:
depth 2, cos(theta)=0 gives 1/pi; depth 2, cos(theta)=1 gives 2.
"""

from dataclasses import dataclass

import numpy as np

from scipy.spatial.distance import cdist

KERNEL_KINDS = ("linear", "rbf", "laplace", "fourier_bandlimited", "ntk_relu")


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    lengthscale: float = 1.0
    n_modes: int = None
    depth: int = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind in ("rbf", "laplace") and not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if self.kind == "fourier_bandlimited":
            if self.n_modes is None or int(self.n_modes) < 1:
                raise ValueError("fourier_bandlimited needs n_modes >= 1")
            object.__setattr__(self, "n_modes", int(self.n_modes))
        if self.kind == "ntk_relu":
            if self.depth is None or int(self.depth) < 1:
                raise ValueError("ntk_relu needs depth >= 1")
            object.__setattr__(self, "depth", int(self.depth))


def arccos_kappa0(t):
    t = np.clip(t, -1.0, 1.0)
    return (np.pi - np.arccos(t)) / np.pi


def arccos_kappa1(t):
    t = np.clip(t, -1.0, 1.0)
    return (t * (np.pi - np.arccos(t)) + np.sqrt(np.maximum(0.0, 1.0 - t * t))) / np.pi


def ntk_relu_eval(depth, dot, n1, n2):
    """NTK value(s) from raw dot products and the two input norms.

    Broadcasts over arrays.  Homogeneous of degree 2: scaling the norms by
    (c1, c2) and the dot by c1*c2 scales the result by c1*c2.  Zero-norm
    inputs give 0 (a ReLU network with no bias vanishes at the origin).
    """
    dot = np.asarray(dot, dtype=np.float64)
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    scale = n1 * n2
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(scale > 0, dot / np.where(scale > 0, scale, 1.0), 0.0)
    t = np.clip(t, -1.0, 1.0)
    S = scale * t
    theta = S.copy()
    for _ in range(int(depth) - 1):
        k0 = arccos_kappa0(t)
        S = scale * arccos_kappa1(t)
        theta = S + theta * k0
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(scale > 0, S / np.where(scale > 0, scale, 1.0), 0.0)
        t = np.clip(t, -1.0, 1.0)
    return np.where(scale > 0, theta, 0.0)


def gram(spec, X1, X2=None):
    """Gram matrix K[i, j] = K(X1[i], X2[j]); X2=None means X2 = X1.

    The square case is symmetrized as (K + K.T)/2 so it is bit-identically
    symmetric.
    """
    X1 = np.asarray(X1, dtype=np.float64)
    square = X2 is None
    X2 = X1 if square else np.asarray(X2, dtype=np.float64)
    if X1.ndim != 2 or X2.ndim != 2 or X1.shape[1] != X2.shape[1]:
        raise ValueError("inputs must be 2-D with matching feature dimension")

    if spec.kind == "linear":
        K = X1 @ X2.T / X1.shape[1]
    elif spec.kind == "rbf":
        d2 = cdist(X1, X2, metric="sqeuclidean")
        K = np.exp(-d2 / (2.0 * spec.lengthscale**2))
    elif spec.kind == "laplace":
        d = cdist(X1, X2, metric="euclidean")
        K = np.exp(-d / spec.lengthscale)
    elif spec.kind == "fourier_bandlimited":
        if X1.shape[1] != 1:
            raise ValueError("fourier_bandlimited is defined for 1-D inputs only")
        delta = np.pi * (X1 - X2.T)  # (n1, n2)
        K = np.zeros_like(delta)
        for k in range(1, spec.n_modes + 1):
            K += np.cos(k * delta)
    elif spec.kind == "ntk_relu":
        dots = X1 @ X2.T
        norms1 = np.linalg.norm(X1, axis=1)
        norms2 = np.linalg.norm(X2, axis=1)
        K = ntk_relu_eval(spec.depth, dots, norms1[:, None], norms2[None, :])
    else:  # pragma: no cover - guarded by KernelSpec
        raise ValueError(f"unknown kernel kind {spec.kind!r}")

    if square:
        K = 0.5 * (K + K.T)
    return K
