"""Dense linear algebra helpers on float64 numpy arrays.

Matrices are plain 2-D ``np.ndarray`` objects. Every function converts its
input to float64 before doing any arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, SingularMatrixError, ValidationError

DEFAULT_BLOCK_CAP = 128
RIDGE_FLOOR = 1e-10
SYMMETRY_RTOL = 1e-12
PSD_ATOL = 1e-10


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns

    def reconstruct(self, values=None):
        lam = self.eigenvalues if values is None else values
        v = self.eigenvectors
        return (v * lam) @ v.T


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix contains non-finite entries")
    return m


def _centered_cov(x: np.ndarray) -> np.ndarray:
    xc = x - x.mean(axis=0)
    return xc.T @ xc / (x.shape[0] - 1)


def covariance(w, block_cap: int = DEFAULT_BLOCK_CAP) -> np.ndarray:
    """Sample covariance of the columns of ``w`` (rows are observations).

    When ``w`` has more than ``block_cap`` columns the result is block
    diagonal: each contiguous column block of width ``block_cap`` (the last
    one possibly narrower) gets its own exact covariance and cross-block
    entries are left at zero.
    """
    w = as_matrix(w)
    n, d = w.shape
    if n < 2:
        raise DegenerateInputError("covariance needs at least 2 rows")
    if block_cap < 1:
        raise ValidationError("block_cap must be positive")
    if d <= block_cap:
        return _centered_cov(w)
    out = np.zeros((d, d))
    for start in range(0, d, block_cap):
        stop = min(start + block_cap, d)
        out[start:stop, start:stop] = _centered_cov(w[:, start:stop])
    return out


def cross_covariance(a, b) -> np.ndarray:
    """Covariance between the columns of ``a`` and the columns of ``b``."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[0] != b.shape[0]:
        raise ValidationError("cross covariance needs equal row counts")
    if a.shape[0] < 2:
        raise DegenerateInputError("cross covariance needs at least 2 rows")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    return ac.T @ bc / (a.shape[0] - 1)


def check_symmetric(s) -> np.ndarray:
    s = as_matrix(s)
    if s.shape[0] != s.shape[1]:
        raise ValidationError(f"expected a square matrix, got {s.shape}")
    scale = max(1.0, float(np.abs(s).max(initial=0.0)))
    if np.abs(s - s.T).max(initial=0.0) > SYMMETRY_RTOL * scale:
        raise ValidationError("matrix is not symmetric")
    return 0.5 * (s + s.T)


def jacobi_eigh(s, tol: float = 1e-15, max_sweeps: int = 100):
    """Cyclic Jacobi eigenvalue iteration for a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` in the order the rotations leave
    them; callers sort.
    """
    a = np.array(s, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0 or n == 1:
        return np.diag(a).copy(), v
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                cp = a[:, p].copy()
                cq = a[:, q]
                a[:, p] = c * cp - sn * cq
                a[:, q] = sn * cp + c * cq
                rp = a[p, :].copy()
                rq = a[q, :]
                a[p, :] = c * rp - sn * rq
                a[q, :] = sn * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    return np.diag(a).copy(), v


def sym_eig(s, method: str = "lapack") -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    ``method="jacobi"`` uses the in-house cyclic Jacobi solver, ``"lapack"``
    delegates to ``numpy.linalg.eigh``.
    """
    s = check_symmetric(s)
    if method == "lapack":
        lam, vec = np.linalg.eigh(s)
    elif method == "jacobi":
        lam, vec = jacobi_eigh(s)
    else:
        raise ValidationError(f"unknown eigensolver {method!r}")
    order = np.argsort(-lam, kind="stable")
    return EigenDecomposition(lam[order], vec[:, order])


def _psd_eig(s) -> EigenDecomposition:
    eig = sym_eig(s)
    lam = eig.eigenvalues
    lam_max = lam[0] if lam.size else 0.0
    if lam.size and lam[-1] < -PSD_ATOL * max(1.0, abs(lam_max)):
        raise ValidationError("matrix is not positive semi-definite")
    return eig


def floored_eigenvalues(lam: np.ndarray) -> np.ndarray:
    """Clamp eigenvalues to ``max(lam, RIDGE_FLOOR * lam_max)``."""
    lam_max = lam.max(initial=0.0)
    if lam_max <= 0.0:
        raise SingularMatrixError("matrix has no positive eigenvalue")
    return np.maximum(lam, RIDGE_FLOOR * lam_max)


def regularize(s) -> np.ndarray:
    """Return the positive-definite matrix with floored eigenvalues."""
    eig = _psd_eig(s)
    return eig.reconstruct(floored_eigenvalues(eig.eigenvalues))


def matrix_sqrt(s) -> np.ndarray:
    """PSD square root. Eigenvalues within rounding noise of zero are treated
    as zero (the cutoff ``pinv`` uses), since the square root would otherwise
    magnify 1e-16 noise to 1e-8."""
    eig = _psd_eig(s)
    lam = eig.eigenvalues
    cutoff = max(lam.size, 1) * np.finfo(np.float64).eps * np.abs(lam).max(initial=0.0)
    return eig.reconstruct(np.sqrt(np.where(lam > cutoff, lam, 0.0)))


def matrix_inv_sqrt(s) -> np.ndarray:
    eig = _psd_eig(s)
    return eig.reconstruct(1.0 / np.sqrt(floored_eigenvalues(eig.eigenvalues)))


def matrix_inv(s) -> np.ndarray:
    eig = _psd_eig(s)
    return eig.reconstruct(1.0 / floored_eigenvalues(eig.eigenvalues))


def matrix_log(s) -> np.ndarray:
    eig = _psd_eig(s)
    return eig.reconstruct(np.log(floored_eigenvalues(eig.eigenvalues)))


def matrix_exp_sym(s) -> np.ndarray:
    eig = sym_eig(s)
    return eig.reconstruct(np.exp(eig.eigenvalues))


def logdet(s) -> float:
    """Log-determinant of a positive (semi-)definite matrix.

    Cholesky first; if that fails the eigenvalues are floored instead.
    """
    s = check_symmetric(s)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        eig = _psd_eig(s)
        return float(np.sum(np.log(floored_eigenvalues(eig.eigenvalues))))
    diag = np.diag(chol)
    if np.any(diag <= 0.0):
        raise SingularMatrixError("zero pivot in Cholesky factor")
    return float(2.0 * np.sum(np.log(diag)))


def qr(w):
    """Reduced QR factorisation with a non-negative diagonal in ``R``."""
    w = as_matrix(w)
    q, r = np.linalg.qr(w, mode="reduced")
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def row_softmax(w) -> np.ndarray:
    w = as_matrix(w)
    shifted = w - w.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    # summing in sorted order makes the result independent of column order
    return e / np.sort(e, axis=1).sum(axis=1, keepdims=True)
