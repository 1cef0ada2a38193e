"""Mercer decomposition of a kernel with respect to a discrete measure.

For masses p over M points, the eigenproblem

    K diag(p) Phi = Phi diag(eta),   Phi^T diag(p) Phi = I

is solved through the symmetric matrix B = diag(sqrt p) K diag(sqrt p),
whose eigenvectors v give eigenfunction values phi = v / sqrt(p) on the
support of p.  Off-support points get eigenfunction values by Nystrom
extension, which only exists for modes with eta > 0; modes at (numerically)
zero eigenvalue are "collapsed" and live outside the RKHS.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .measures import BINARY_MAGIC, DiscreteMeasure

DEFAULT_RANK_THRESHOLD = 1e-12

# |K - K.T| tolerance and negative-eigenvalue tolerance, relative to scale
SYMMETRY_RTOL = 1e-8
PSD_RTOL = 1e-8


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (descending) and eigenfunction values at all dataset points.

    The eigenproblem runs on the support of the measure (size s), so there
    are m = s modes.  Phi has shape (M, m): support rows come from the
    eigensolve, off-support rows are Nystrom-extended for the first `rank`
    modes and stored as 0 for collapsed modes (those values are undefined
    and must not be used; the theory layer routes around them).
    """

    eigenvalues: np.ndarray
    Phi: np.ndarray
    measure: DiscreteMeasure
    support: np.ndarray
    rank: int
    rank_threshold: float

    @property
    def n_modes(self):
        return self.eigenvalues.shape[0]

    @property
    def n_collapsed(self):
        return self.n_modes - self.rank

    @property
    def offsupport(self):
        mask = np.ones(self.Phi.shape[0], dtype=bool)
        mask[self.support] = False
        return np.flatnonzero(mask)


def _check_square_symmetric(K, M):
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (M, M):
        raise ValueError(f"kernel matrix must be ({M}, {M}), got {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValueError("kernel matrix contains non-finite entries")
    scale = np.abs(K).max() or 1.0
    if np.abs(K - K.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError("kernel matrix is not symmetric")
    return 0.5 * (K + K.T)


def mercer_decompose(K, measure, rank_threshold=DEFAULT_RANK_THRESHOLD):
    """Diagonalize the kernel with respect to the measure.

    Eigenvalues come back sorted descending and clipped at zero (a negative
    eigenvalue beyond -PSD_RTOL * scale raises).  The sign of each
    eigenfunction is fixed so its largest-magnitude value on the support is
    positive, first index winning ties, which makes results reproducible up
    to genuinely degenerate eigenspaces.
    """
    if not isinstance(measure, DiscreteMeasure):
        measure = DiscreteMeasure(measure)
    M = measure.M
    K = _check_square_symmetric(K, M)
    sup = measure.support()
    s = sup.size
    if s == 0:
        raise ValueError("measure has empty support")
    p_s = measure.masses[sup]
    sqrt_p = np.sqrt(p_s)
    B = K[np.ix_(sup, sup)] * sqrt_p[:, None] * sqrt_p[None, :]
    B = 0.5 * (B + B.T)
    w, V = scipy.linalg.eigh(B)
    order = np.argsort(w)[::-1]
    w = w[order]
    V = V[:, order]

    scale = max(abs(w[0]) if s else 0.0, abs(w[-1]) if s else 0.0, 1e-300)
    if w[-1] < -PSD_RTOL * scale:
        raise ValueError(
            f"kernel is not positive semidefinite under this measure "
            f"(min eigenvalue {w[-1]:.3e} at scale {scale:.3e})"
        )
    eta = np.clip(w, 0.0, None)

    Phi_s = V / sqrt_p[:, None]
    # sign convention: largest-|value| entry on the support is positive
    anchor = np.argmax(np.abs(Phi_s), axis=0)
    signs = np.sign(Phi_s[anchor, np.arange(s)])
    signs[signs == 0] = 1.0
    Phi_s = Phi_s * signs[None, :]

    rank = int(np.count_nonzero(eta > rank_threshold * eta[0])) if eta[0] > 0 else 0

    Phi = np.zeros((M, s))
    Phi[sup] = Phi_s
    off = np.setdiff1d(np.arange(M), sup, assume_unique=False)
    if off.size and rank:
        Phi[np.ix_(off, np.arange(rank))] = (
            K[np.ix_(off, sup)] @ (p_s[:, None] * Phi_s[:, :rank]) / eta[:rank]
        )

    return SpectralDecomposition(
        eigenvalues=eta,
        Phi=Phi,
        measure=measure,
        support=sup,
        rank=rank,
        rank_threshold=float(rank_threshold),
    )


def nystrom_extend(dec, K_cross, modes=None):
    """Eigenfunction values at new points from kernel values to the support.

    K_cross has shape (n_new, s) against dec.support (in support order).
    Only modes with eta > 0 can be extended; asking for a collapsed mode
    raises.
    """
    K_cross = np.asarray(K_cross, dtype=np.float64)
    s = dec.support.size
    if K_cross.ndim != 2 or K_cross.shape[1] != s:
        raise ValueError(f"K_cross must be (n_new, {s}), got {K_cross.shape}")
    if modes is None:
        modes = np.arange(dec.rank)
    else:
        modes = np.atleast_1d(np.asarray(modes, dtype=int))
        if np.any(modes >= dec.rank) or np.any(modes < 0):
            raise ValueError(
                "Nystrom extension is undefined for zero-eigenvalue modes "
                f"(rank {dec.rank}, requested {modes})"
            )
    p_s = dec.measure.masses[dec.support]
    Phi_s = dec.Phi[dec.support][:, modes]
    return K_cross @ (p_s[:, None] * Phi_s) / dec.eigenvalues[modes]


def project_target(dec, Y):
    """Coefficients abar = Phi^T diag(p) Y, shape (n_modes, C).

    With a complete basis (all M modes at full support) this satisfies the
    Parseval identity sum_rho abar_rho^2 = <Y^2>_p per output.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != dec.Phi.shape[0]:
        raise ValueError("Y must have one row per dataset point")
    sup = dec.support
    p_s = dec.measure.masses[sup]
    return dec.Phi[sup].T @ (p_s[:, None] * Y[sup])


@dataclass(frozen=True)
class OverlapMatrix:
    """Test-measure Gram matrix of the training eigenfunctions.

    O[rho, gam] = sum_mu ptilde_mu phi_rho(x_mu) phi_gam(x_mu), symmetric
    PSD.  When the test measure puts mass on points outside the training
    support and collapsed modes exist, the collapsed rows/columns cannot be
    evaluated; `collapsed_undefined` is set and the theory layer must use
    the residual route for the out-of-RKHS terms.
    """

    O: np.ndarray
    rank: int
    collapsed_undefined: bool = False

    @property
    def n_modes(self):
        return self.O.shape[0]


def overlap(dec, ptilde, Phi_test=None):
    """Overlap matrix of dec's eigenfunctions under a test measure.

    Without Phi_test the test measure must live on the same dataset and the
    stored (extended) eigenfunction values are used.  With Phi_test, ptilde
    masses weight its rows instead (columns = modes, in eigenvalue order).
    """
    if not isinstance(ptilde, DiscreteMeasure):
        ptilde = DiscreteMeasure(ptilde)
    if Phi_test is None:
        if ptilde.M != dec.Phi.shape[0]:
            raise ValueError("test measure must cover the same dataset")
        Phi_test = dec.Phi
        collapsed_undefined = bool(
            dec.n_collapsed > 0
            and np.any(ptilde.masses[dec.offsupport] > 0)
        )
    else:
        Phi_test = np.asarray(Phi_test, dtype=np.float64)
        if Phi_test.ndim != 2 or Phi_test.shape[0] != ptilde.M:
            raise ValueError("Phi_test must be (n_test, n_modes)")
        if Phi_test.shape[1] not in (dec.rank, dec.n_modes):
            raise ValueError(
                f"Phi_test must cover the first {dec.rank} (in-RKHS) or all "
                f"{dec.n_modes} modes"
            )
        collapsed_undefined = Phi_test.shape[1] < dec.n_modes and dec.n_collapsed > 0
    weighted = ptilde.masses[:, None] * Phi_test
    O = Phi_test.T @ weighted
    O = 0.5 * (O + O.T)
    return OverlapMatrix(O=O, rank=dec.rank, collapsed_undefined=collapsed_undefined)


def identity_overlap(dec):
    """The overlap of a test measure equal to the training measure."""
    return OverlapMatrix(O=np.eye(dec.n_modes), rank=dec.rank, collapsed_undefined=False)


@dataclass(frozen=True)
class CrossOverlapDiagnostics:
    """Change-of-basis checks between decompositions under p and ptilde.

    A[rho, gam]  = <phi_rho, phitilde_gam>_p
    At[rho, gam] = <phitilde_rho, phi_gam>_ptilde

    In exact arithmetic At A = A At = I, the overlap matrix factors as
    O = At^T At, and At Lambda At^T reproduces the test-measure eigenvalues
    as a diagonal matrix.
    """

    A: np.ndarray
    At: np.ndarray
    resid_inverse: float
    resid_overlap: float
    resid_eigenvalues: float


def cross_overlap_diagnostics(K, p, ptilde, rank_threshold=DEFAULT_RANK_THRESHOLD):
    if not isinstance(p, DiscreteMeasure):
        p = DiscreteMeasure(p)
    if not isinstance(ptilde, DiscreteMeasure):
        ptilde = DiscreteMeasure(ptilde)
    if p.support().size != p.M or ptilde.support().size != ptilde.M:
        raise ValueError("cross-overlap diagnostics need full-support measures")
    dec = mercer_decompose(K, p, rank_threshold)
    dect = mercer_decompose(K, ptilde, rank_threshold)
    if dec.rank < dec.n_modes or dect.rank < dect.n_modes:
        raise ValueError("cross-overlap diagnostics need strictly positive spectra")
    Phi, Phit = dec.Phi, dect.Phi
    A = Phi.T @ (p.masses[:, None] * Phit)
    At = Phit.T @ (ptilde.masses[:, None] * Phi)
    eye = np.eye(dec.n_modes)
    resid_inverse = max(
        np.abs(At @ A - eye).max(),
        np.abs(A @ At - eye).max(),
    )
    O = overlap(dec, ptilde).O
    resid_overlap = np.abs(O - At.T @ At).max()
    Lt = (At * dec.eigenvalues[None, :]) @ At.T
    resid_eigenvalues = np.abs(Lt - np.diag(dect.eigenvalues)).max()
    return CrossOverlapDiagnostics(
        A=A,
        At=At,
        resid_inverse=float(resid_inverse),
        resid_overlap=float(resid_overlap),
        resid_eigenvalues=float(resid_eigenvalues),
    )


# ---------------------------------------------------------------------------
# Binary cache.  Same header convention as datasets: magic, little-endian
# uint64 dimensions, float64 payload.
# ---------------------------------------------------------------------------


def decomposition_cache_key(K, measure, rank_threshold=DEFAULT_RANK_THRESHOLD):
    """Content hash of (Gram matrix, masses, threshold) for cache lookups."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(K, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(measure.masses, dtype="<f8").tobytes())
    h.update(np.float64(rank_threshold).tobytes())
    return h.hexdigest()


def save_decomposition(path, dec):
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        M = dec.Phi.shape[0]
        np.asarray([M, dec.n_modes, dec.rank], dtype="<u8").tofile(fh)
        np.asarray([dec.rank_threshold], dtype="<f8").tofile(fh)
        dec.eigenvalues.astype("<f8").tofile(fh)
        dec.Phi.astype("<f8").tofile(fh)
        dec.measure.masses.astype("<f8").tofile(fh)


def load_decomposition(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BINARY_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {BINARY_MAGIC!r}")
        dims = np.fromfile(fh, dtype="<u8", count=3)
        if dims.size != 3:
            raise ValueError("truncated decomposition header")
        M, m, rank = (int(v) for v in dims)
        thr = np.fromfile(fh, dtype="<f8", count=1)
        eta = np.fromfile(fh, dtype="<f8", count=m)
        Phi = np.fromfile(fh, dtype="<f8", count=M * m)
        masses = np.fromfile(fh, dtype="<f8", count=M)
        if thr.size != 1 or eta.size != m or Phi.size != M * m or masses.size != M:
            raise ValueError("truncated decomposition payload")
    measure = DiscreteMeasure(masses)
    return SpectralDecomposition(
        eigenvalues=eta,
        Phi=Phi.reshape(M, m),
        measure=measure,
        support=measure.support(),
        rank=rank,
        rank_threshold=float(thr[0]),
    )
