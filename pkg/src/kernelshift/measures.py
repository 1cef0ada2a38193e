"""Datasets, discrete probability measures, and synthetic samplers.

A dataset is a fixed collection of M points with D input features and C
target columns.  Train and test distributions over the same dataset are
represented as discrete measures (nonnegative masses summing to one), which
is all the downstream theory needs: expectations become mass-weighted sums.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from ._rng import rng_from

MASS_TOL = 1e-12

BINARY_MAGIC = b"KSL1"


@dataclass(frozen=True)
class Dataset:
    """Points X (M, D), targets Y (M, C) and stable integer row ids."""

    X: np.ndarray
    Y: np.ndarray
    ids: np.ndarray = None

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        Y = np.ascontiguousarray(Y)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D (M, D), got shape {X.shape}")
        if Y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        if not np.all(np.isfinite(Y)):
            raise ValueError("Y contains non-finite entries")
        ids = self.ids
        if ids is None:
            ids = np.arange(X.shape[0], dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape != (X.shape[0],):
                raise ValueError("ids must be one per row")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "ids", ids)

    @property
    def M(self):
        return self.X.shape[0]

    @property
    def D(self):
        return self.X.shape[1]

    @property
    def C(self):
        return self.Y.shape[1]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability masses over the M dataset points.

    Masses must be nonnegative and sum to one within MASS_TOL.  Tiny masses
    are kept as-is; nothing is truncated, so softmax-parameterized measures
    keep full support.
    """

    masses: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.masses, dtype=np.float64))
        if p.ndim != 1:
            raise ValueError("masses must be a 1-D vector")
        if not np.all(np.isfinite(p)):
            raise ValueError("masses contain non-finite entries")
        if np.any(p < 0):
            raise ValueError("masses must be nonnegative")
        total = p.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {total!r}, not 1 within {MASS_TOL}")
        object.__setattr__(self, "masses", p)

    @property
    def M(self):
        return self.masses.shape[0]

    def support(self):
        """Indices with strictly positive mass."""
        return np.flatnonzero(self.masses > 0.0)


def uniform_measure(M):
    if M <= 0:
        raise ValueError("M must be positive")
    return DiscreteMeasure(np.full(M, 1.0 / M))


def from_logits(z):
    """Softmax of a logit vector; invariant to a constant shift of z."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("logits must be a 1-D vector")
    w = np.exp(z - z.max())
    return DiscreteMeasure(w / w.sum())


def sample_indices(measure, P, seed, label="sample"):
    """Draw P dataset indices i.i.d. with replacement from the measure.

    Deterministic given (seed, label); independent draws never share an RNG
    stream with other call sites.
    """
    if P < 0:
        raise ValueError("P must be nonnegative")
    rng = rng_from(seed, label)
    return rng_with_indices(rng, measure, P)


def rng_with_indices(rng, measure, P):
    """Same as sample_indices but drawing from a caller-provided Generator."""
    return rng.choice(measure.M, size=int(P), replace=True, p=measure.masses)


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic input distributions.

    kind = "gaussian_diag": independent centered Gaussians, per-feature
        variances `variances` (length D).
    kind = "sphere": uniform on the sphere of radius `radius` in `dim`
        dimensions; every sampled row has Euclidean norm exactly `radius`.
    kind = "rectangular": independent uniform features on
        [-sqrt(3) sigma_a, +sqrt(3) sigma_a], so feature a has variance
        sigma_a^2 (length-D vector `sigmas`).
    """

    kind: str
    variances: tuple = None
    radius: float = None
    dim: int = None
    sigmas: tuple = None

    def __post_init__(self):
        if self.kind == "gaussian_diag":
            if self.variances is None:
                raise ValueError("gaussian_diag needs per-feature variances")
            v = tuple(float(x) for x in self.variances)
            if any(x < 0 for x in v):
                raise ValueError("variances must be nonnegative")
            object.__setattr__(self, "variances", v)
        elif self.kind == "sphere":
            if self.radius is None or self.dim is None:
                raise ValueError("sphere needs radius and dim")
            if self.radius <= 0 or self.dim < 1:
                raise ValueError("sphere needs radius > 0 and dim >= 1")
        elif self.kind == "rectangular":
            if self.sigmas is None:
                raise ValueError("rectangular needs per-feature sigmas")
            s = tuple(float(x) for x in self.sigmas)
            if any(x < 0 for x in s):
                raise ValueError("sigmas must be nonnegative")
            object.__setattr__(self, "sigmas", s)
        else:
            raise ValueError(f"unknown synthetic kind {self.kind!r}")

    @property
    def D(self):
        if self.kind == "gaussian_diag":
            return len(self.variances)
        if self.kind == "sphere":
            return int(self.dim)
        return len(self.sigmas)


def synth_sample(spec, n, seed, label="synth"):
    """Sample n rows from a SyntheticSpec. Returns an (n, D) array."""
    rng = rng_from(seed, label)
    if spec.kind == "gaussian_diag":
        sd = np.sqrt(np.asarray(spec.variances))
        return rng.standard_normal((n, spec.D)) * sd
    if spec.kind == "sphere":
        g = rng.standard_normal((n, spec.dim))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        # resample the (measure-zero) degenerate rows rather than dividing by ~0
        bad = np.flatnonzero(norms[:, 0] < 1e-12)
        while bad.size:
            g[bad] = rng.standard_normal((bad.size, spec.dim))
            norms[bad] = np.linalg.norm(g[bad], axis=1, keepdims=True)
            bad = np.flatnonzero(norms[:, 0] < 1e-12)
        return spec.radius * (g / norms)
    if spec.kind == "rectangular":
        half = np.sqrt(3.0) * np.asarray(spec.sigmas)
        return rng.uniform(-1.0, 1.0, size=(n, spec.D)) * half
    raise ValueError(f"unknown synthetic kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# File formats.
#
# CSV: header "f0,...,f{D-1},y0,...,y{C-1}", one row per point, plain floats.
# Binary: magic "KSL1", then M, D, C as little-endian uint64, then X and Y as
# float64 row-major.  Row index on load becomes the id.
# ---------------------------------------------------------------------------


def _standardized(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd


def load_dataset(path, standardize=False):
    """Load a dataset from .csv or binary format (sniffed by magic bytes).

    standardize=True applies per-feature (X - mean) / std using the file's
    own statistics; the default leaves data exactly as stored.
    """
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BINARY_MAGIC:
        ds = _load_binary(path)
    else:
        ds = _load_csv(path)
    if standardize:
        ds = Dataset(_standardized(ds.X), ds.Y, ds.ids)
    return ds


def _load_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BINARY_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {BINARY_MAGIC!r}")
        header = np.fromfile(fh, dtype="<u8", count=3)
        if header.size != 3:
            raise ValueError("truncated binary header")
        M, D, C = (int(v) for v in header)
        X = np.fromfile(fh, dtype="<f8", count=M * D)
        Y = np.fromfile(fh, dtype="<f8", count=M * C)
        if X.size != M * D or Y.size != M * C:
            raise ValueError("truncated binary payload")
    return Dataset(X.reshape(M, D), Y.reshape(M, C))


def _load_csv(path):
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty CSV file") from None
        names = [h.strip() for h in header]
        D = sum(1 for h in names if h.startswith("f"))
        C = sum(1 for h in names if h.startswith("y"))
        expected = [f"f{j}" for j in range(D)] + [f"y{j}" for j in range(C)]
        if names != expected or C == 0 or D == 0:
            raise ValueError(
                f"CSV header must be f0..f{{D-1}},y0..y{{C-1}}, got {names!r}"
            )
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != D + C:
        raise ValueError("CSV rows do not match header width")
    return Dataset(data[:, :D], data[:, D:])


def save_dataset(path, dataset, fmt=None):
    """Write a dataset as CSV or binary; fmt defaults from the extension."""
    if fmt is None:
        fmt = "csv" if os.path.splitext(path)[1].lower() == ".csv" else "bin"
    if fmt == "csv":
        header = [f"f{j}" for j in range(dataset.D)] + [f"y{j}" for j in range(dataset.C)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for x, y in zip(dataset.X, dataset.Y):
                writer.writerow([format(v, ".17g") for v in x] + [format(v, ".17g") for v in y])
    elif fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            np.asarray([dataset.M, dataset.D, dataset.C], dtype="<u8").tofile(fh)
            dataset.X.astype("<f8").tofile(fh)
            dataset.Y.astype("<f8").tofile(fh)
    else:
        raise ValueError(f"unknown format {fmt!r}")
