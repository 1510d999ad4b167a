"""Dense symmetric linear algebra used by every estimation stage.

Everything here is deterministic and privacy-free: eigendecomposition via
cyclic Jacobi rotations, spectral projectors, the PSD-cone projection, and
the whitened (relative) error norms used to score estimates.  Matrices are
plain float64 ``numpy`` arrays; construction helpers symmetrize and validate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, DegenerateSpectrum, InvalidArgument, InvalidMatrix, RangeMismatch

MAX_DIM = 256

_JACOBI_SWEEP_CAP = 100
_JACOBI_REL_TOL = 1e-12

# Relative eigenvalue cutoff below which a direction counts as null space.
NULL_SPACE_CUTOFF = 1e-12
# Tolerated out-of-column-space Frobenius mass, relative to the estimate.
RANGE_TOL = 1e-8


def as_sym_matrix(m, dim=None):
    """Validate and symmetrize a square matrix, returning a float64 copy.

    Raises InvalidMatrix for non-square/non-finite input and for dimensions
    above MAX_DIM; symmetrization averages ``m`` with its transpose so the
    result is exactly symmetric.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidMatrix(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_DIM:
        raise InvalidMatrix(f"dimension {a.shape[0]} exceeds the supported cap {MAX_DIM}")
    if dim is not None and a.shape[0] != dim:
        raise InvalidArgument(f"expected dimension {dim}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix("matrix contains NaN or Inf entries")
    sym = 0.5 * (a + a.T)
    return sym


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted non-increasing with an aligned orthonormal basis.

    ``eigenvectors[:, i]`` is the unit eigenvector for ``eigenvalues[i]``;
    the source matrix reconstructs as ``V @ diag(vals) @ V.T``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self):
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class Projector:
    """A symmetric idempotent matrix of known rank."""

    matrix: np.ndarray
    rank: int

    def complement(self):
        d = self.matrix.shape[0]
        return Projector(np.eye(d) - self.matrix, d - self.rank)


def _jacobi_sweeps(a, v, tol, sweep_cap):
    """Run cyclic Jacobi sweeps on a (b, d, d) stack until off-diagonal
    Frobenius mass drops below the per-matrix tolerance.

    The same (p, q) rotation schedule is applied to every matrix in the
    batch with per-matrix angles, so the whole batch vectorizes; converged
    matrices are dropped from the working set between sweeps.
    """
    b, d, _ = a.shape
    iu, ju = np.triu_indices(d, k=1)
    active = np.arange(b)

    for _ in range(sweep_cap):
        upper = a[active][:, iu, ju]
        off = np.sqrt(2.0 * np.einsum("bk,bk->b", upper, upper))
        keep = off > tol[active]
        active = active[keep]
        if active.size == 0:
            return
        w = a[active]
        wv = v[active] if v is not None else None
        nb = active.size
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = w[:, p, q]
                live = np.abs(apq) > 1e-300
                if not np.any(live):
                    continue
                theta = np.zeros(nb)
                np.divide(w[:, q, q] - w[:, p, p], 2.0 * apq, out=theta, where=live)
                # t = sign(theta) / (|theta| + sqrt(theta^2 + 1)), guarded
                # against theta^2 overflow for near-diagonal pairs.
                abs_theta = np.abs(theta)
                big = abs_theta > 1e150
                theta_safe = np.where(big, 1.0, theta)
                t = np.where(
                    big,
                    np.divide(0.5, theta, out=np.zeros(nb), where=big),
                    np.sign(theta_safe) / (np.abs(theta_safe) + np.sqrt(theta_safe * theta_safe + 1.0)),
                )
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(live, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                rp = w[:, p, :].copy()
                rq = w[:, q, :].copy()
                w[:, p, :] = c[:, None] * rp - s[:, None] * rq
                w[:, q, :] = s[:, None] * rp + c[:, None] * rq
                cp = w[:, :, p].copy()
                cq = w[:, :, q].copy()
                w[:, :, p] = c[:, None] * cp - s[:, None] * cq
                w[:, :, q] = s[:, None] * cp + c[:, None] * cq
                w[:, p, q] = 0.0
                w[:, q, p] = 0.0

                if wv is not None:
                    vp = wv[:, :, p].copy()
                    vq = wv[:, :, q].copy()
                    wv[:, :, p] = c[:, None] * vp - s[:, None] * vq
                    wv[:, :, q] = s[:, None] * vp + c[:, None] * vq
        a[active] = w
        if v is not None:
            v[active] = wv
    upper = a[active][:, iu, ju]
    off = np.sqrt(2.0 * np.einsum("bk,bk->b", upper, upper))
    if np.any(off > tol[active]):
        raise ConvergenceFailure(
            f"Jacobi eigensolver did not converge within {sweep_cap} sweeps"
        )


def _jacobi_batch(mats, sweep_cap=_JACOBI_SWEEP_CAP, vectors=True):
    a = np.array(mats, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise InvalidMatrix(f"expected a (b, d, d) stack, got shape {a.shape}")
    b, d, _ = a.shape
    v = np.broadcast_to(np.eye(d), (b, d, d)).copy() if vectors else None
    if d == 1 or b == 0:
        return np.einsum("bii->bi", a).copy(), v

    fro = np.sqrt(np.einsum("bij,bij->b", a, a))
    tol = _JACOBI_REL_TOL * np.maximum(fro, np.finfo(np.float64).tiny)
    _jacobi_sweeps(a, v, tol, sweep_cap)
    diag = np.einsum("bii->bi", a).copy()
    return diag, v


def sym_eig_batch(mats, vectors=True):
    """Eigendecompose a stack of symmetric matrices.

    Returns (values, vectors) with values sorted non-increasing per matrix
    (stable tie-break by pre-sort position) and vectors as aligned columns;
    pass ``vectors=False`` to skip rotation accumulation (vectors is None).
    """
    diag, v = _jacobi_batch(np.asarray(mats, dtype=np.float64), vectors=vectors)
    order = np.argsort(-diag, axis=1, kind="stable")
    vals = np.take_along_axis(diag, order, axis=1)
    vecs = np.take_along_axis(v, order[:, None, :], axis=2) if v is not None else None
    return vals, vecs


def sym_eig(m) -> Spectrum:
    """Full eigendecomposition of one symmetric matrix.

    Eigenvalues may be negative; sorting is non-increasing with stable
    tie-breaking so repeated runs agree exactly.
    """
    a = as_sym_matrix(m)
    vals, vecs = sym_eig_batch(a[None, :, :])
    return Spectrum(eigenvalues=vals[0], eigenvectors=vecs[0])


def reconstruct(spectrum: Spectrum):
    v = spectrum.eigenvectors
    return (v * spectrum.eigenvalues) @ v.T


def psd_project(m):
    """Frobenius-nearest PSD matrix: clip negative eigenvalues to zero."""
    spec = sym_eig(m)
    clipped = np.maximum(spec.eigenvalues, 0.0)
    v = spec.eigenvectors
    out = (v * clipped) @ v.T
    return 0.5 * (out + out.T)


def _whitening_basis(truth):
    """Column basis and inverse-root eigenvalues of ``truth``'s range.

    Rank-deficient truth is handled by a pseudo-inverse square root with
    eigenvalues below NULL_SPACE_CUTOFF * lambda_1 treated as null space.
    """
    t = as_sym_matrix(truth)
    spec = sym_eig(t)
    lam = spec.eigenvalues
    top = lam[0] if lam.size else 0.0
    if lam.size and lam[-1] < -1e-10 * max(abs(top), 1.0):
        raise InvalidMatrix("truth matrix is not positive semidefinite")
    keep = lam > NULL_SPACE_CUTOFF * max(top, 0.0)
    basis = spec.eigenvectors[:, keep]
    inv_root = 1.0 / np.sqrt(lam[keep])
    return basis, inv_root


def rel_cov_norm(estimate, truth):
    """Whitened covariance error  || T^{-1/2} E T^{-1/2} - I ||_F.

    For singular truth the norm is computed inside truth's column space;
    estimate mass outside that space beyond RANGE_TOL raises RangeMismatch.
    """
    e = as_sym_matrix(estimate)
    basis, inv_root = _whitening_basis(truth)
    if basis.shape[1] == 0:
        if np.linalg.norm(e) > 0.0:
            raise RangeMismatch("estimate is nonzero but truth has rank zero")
        return 0.0
    inside = basis @ (basis.T @ e @ basis) @ basis.T
    e_norm = np.linalg.norm(e)
    if np.linalg.norm(e - inside) > RANGE_TOL * max(e_norm, np.finfo(np.float64).tiny):
        raise RangeMismatch("estimate has mass outside the truth's column space")
    white = (inv_root[:, None] * (basis.T @ e @ basis)) * inv_root[None, :]
    white[np.diag_indices_from(white)] -= 1.0
    return float(np.linalg.norm(white))


def rel_mean_norm(mu_hat, mu, truth):
    """Whitened mean error  || T^{-1/2} (mu_hat - mu) ||_2  (see rel_cov_norm)."""
    x = np.asarray(mu_hat, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgument("means must be vectors")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("mean difference contains NaN or Inf")
    basis, inv_root = _whitening_basis(truth)
    inside = basis @ (basis.T @ x)
    x_norm = np.linalg.norm(x)
    if np.linalg.norm(x - inside) > RANGE_TOL * max(x_norm, np.finfo(np.float64).tiny):
        raise RangeMismatch("mean difference has mass outside the truth's column space")
    return float(np.linalg.norm(inv_root * (basis.T @ x)))


def projector_from_columns(basis):
    """Orthogonal projector onto the span of the given orthonormal columns."""
    b = np.asarray(basis, dtype=np.float64)
    p = b @ b.T
    return Projector(0.5 * (p + p.T), rank=b.shape[1])


def top_k_projector(spectrum: Spectrum, k) -> Projector:
    """Projector onto the span of the top-k eigenvectors."""
    d = spectrum.dim
    if not 0 <= k <= d:
        raise InvalidArgument(f"k={k} out of range [0, {d}]")
    return projector_from_columns(spectrum.eigenvectors[:, :k])


def condition_ratio(m, i, j):
    """lambda_i / lambda_j of a symmetric matrix (1-based eigenvalue indices)."""
    spec = sym_eig(m)
    d = spec.dim
    if not (1 <= i <= d and 1 <= j <= d):
        raise InvalidArgument(f"indices ({i}, {j}) out of range [1, {d}]")
    denom = spec.eigenvalues[j - 1]
    if denom <= 0.0:
        raise DegenerateSpectrum(f"lambda_{j} = {denom} is not positive")
    return float(spec.eigenvalues[i - 1] / denom)


def weyl_interval(n, r, i):
    """Interval [lambda_i(N) + lambda_d(R), lambda_i(N) + lambda_1(R)].

    By Weyl's inequality the i-th eigenvalue of N + R always lies inside;
    used as a deterministic test oracle for perturbation claims.
    """
    a = as_sym_matrix(n)
    b = as_sym_matrix(r)
    if a.shape != b.shape:
        raise InvalidArgument(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a.shape[0]
    if not 1 <= i <= d:
        raise InvalidArgument(f"index {i} out of range [1, {d}]")
    lam_n = sym_eig(a).eigenvalues
    lam_r = sym_eig(b).eigenvalues
    return float(lam_n[i - 1] + lam_r[-1]), float(lam_n[i - 1] + lam_r[0])


def spd_inverse(m):
    """Inverse of a symmetric positive-definite matrix via its spectrum."""
    spec = sym_eig(m)
    if spec.eigenvalues[-1] <= 0.0:
        raise DegenerateSpectrum("matrix is not positive definite")
    v = spec.eigenvectors
    inv = (v / spec.eigenvalues) @ v.T
    return 0.5 * (inv + inv.T)


def symmetric_polar_factor(a):
    """SPD factor S = (A^T A)^{1/2} of an invertible matrix A.

    A = Q S with Q orthogonal, so A M A^T and S M S share eigenvalues for
    symmetric M; the preconditioner uses this to keep its accumulated map
    symmetric positive definite without changing any conditioning claim.
    """
    a = np.asarray(a, dtype=np.float64)
    gram = as_sym_matrix(a.T @ a)
    spec = sym_eig(gram)
    if spec.eigenvalues[-1] <= 0.0:
        raise DegenerateSpectrum("matrix is singular; no SPD polar factor")
    v = spec.eigenvectors
    s = (v * np.sqrt(spec.eigenvalues)) @ v.T
    return 0.5 * (s + s.T)
