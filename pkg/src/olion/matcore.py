"""Dense-matrix primitives: norms, thin SVD, polar factor, Newton-Schulz.

Matrices are plain 2-D float64 numpy arrays. ``as_matrix`` is the boundary
check used by every public entry point.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteMatrix, ZeroMatrix

NS_COEFFS = (3.4445, -4.7750, 2.0315)
# convergent quintic (f(1) = 1, f'(1) = f''(1) = 0) used for the closing steps
POLISH_COEFFS = (15 / 8, -10 / 8, 3 / 8)
NS_EPS = 1e-7
RANK_TOL = 1e-10
_ZERO_FLOOR = np.finfo(np.float64).tiny


def as_matrix(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[None, :]
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteMatrix("matrix contains NaN or Inf")
    return M


def _require_nonzero(M):
    if not np.any(np.abs(M) >= _ZERO_FLOOR):
        raise ZeroMatrix("matrix has no entry above the zero floor")


def frobenius_norm(M):
    M = as_matrix(M)
    return float(np.sqrt(np.sum(M * M)))


def inner(A, B):
    """Frobenius inner product tr(A^T B)."""
    return float(np.sum(np.asarray(A) * np.asarray(B)))


@dataclass(frozen=True)
class ThinSVD:
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return len(self.singular_values)

    def reconstruct(self):
        return (self.U * self.singular_values) @ self.V.T


def thin_svd(M, rank_tol=RANK_TOL):
    """Rank-truncated SVD keeping singular values above ``rank_tol * sigma_max``."""
    M = as_matrix(M)
    _require_nonzero(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = int(np.count_nonzero(s > rank_tol * s[0]))
    return ThinSVD(U[:, :r].copy(), s[:r].copy(), Vt[:r].T.copy())


def norm_suite(M):
    M = as_matrix(M)
    A = np.abs(M)
    if A.max(initial=0.0) < _ZERO_FLOOR:
        s = np.zeros(1)
    else:
        s = np.linalg.svd(M, compute_uv=False)
    return {
        "frobenius": float(np.sqrt(np.sum(M * M))),
        "spectral": float(s[0]),
        "nuclear": float(np.sum(s)),
        "l1": float(np.sum(A)),
        "linf": float(A.max(initial=0.0)),
    }


def polar_factor_exact(M, rank_tol=RANK_TOL):
    """Orthogonal polar factor U V^T of ``M`` on its numerical range.

    Wide inputs are handled by transposition so the returned factor has
    orthonormal columns when tall and orthonormal rows when wide.
    """
    M = as_matrix(M)
    if M.shape[0] < M.shape[1]:
        return polar_factor_exact(M.T, rank_tol).T
    svd = thin_svd(M, rank_tol)
    return svd.U @ svd.V.T


def polish_steps_for(steps):
    """Number of closing convergent steps in a K-step schedule."""
    return min(2, steps // 2)


def newton_schulz(M, steps=5, coeffs=NS_COEFFS, polish_coeffs=POLISH_COEFFS, polish_steps=None,
                  eps=NS_EPS):
    """Quintic Newton-Schulz approximation of the polar factor.

    Each step is ``X <- a X + b (X X^T) X + c (X X^T)^2 X``.  The first
    ``steps - polish_steps`` steps use the aggressive ``coeffs`` to lift small
    singular values quickly; the last ``polish_steps`` use ``polish_coeffs``,
    which contract towards 1.  With the defaults, K=5 is three fast steps
    followed by two polishing steps.

    The input is pre-normalized by its Frobenius norm, so the result is
    invariant to positive rescaling of ``M`` (up to the ``eps`` guard).
    ``steps=0`` returns just the normalized input.
    """
    M = as_matrix(M)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    _require_nonzero(M)
    if polish_steps is None:
        polish_steps = polish_steps_for(steps)
    transpose = M.shape[0] > M.shape[1]
    X = M.T if transpose else M
    X = X / (np.sqrt(np.sum(X * X)) + eps)
    for k in range(steps):
        a, b, c = polish_coeffs if k >= steps - polish_steps else coeffs
        A = X @ X.T
        X = a * X + (b * A + c * A @ A) @ X
    return X.T if transpose else X


def sign_map(M):
    """Entrywise sign with sign(0) = 0."""
    return np.sign(as_matrix(M))
