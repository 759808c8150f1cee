"""Dense linear-algebra kernels used by the model likelihoods.

All matrices are dense, row-major float64. Log-determinants always go
through Cholesky: the matrices in scope are SPD by construction and a failed
factorization is a sampler signal (NotPositiveDefinite), never a crash. The
Woodbury routines pair the low-rank inverse with the matrix determinant
lemma so no O(p^3) work remains on that path.
"""

import numpy as np

from . import _engine
from .errors import DimMismatch, NotPositiveDefinite

__all__ = [
    "cholesky",
    "logdet_spd",
    "woodbury_inverse",
    "woodbury_logdet_omega",
    "trace_prod",
]


def _check_sym(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > 1e-12 * scale:
        raise ValueError("matrix is not symmetric within 1e-12 relative")
    return a


def cholesky(a):
    """Lower Cholesky factor L with L @ L.T == a.

    Raises NotPositiveDefinite when a pivot falls below 1e-300, which the
    samplers treat as a degenerate covariance proposal.
    """
    a = _check_sym(a)
    out = np.empty_like(a)
    if not _engine.chol_lower(a, out):
        raise NotPositiveDefinite("Cholesky pivot <= 1e-300")
    return out


def logdet_spd(a):
    """log|A| for SPD A, computed as 2*sum(log(diag(cholesky(A))))."""
    return _engine.chol_logdet(cholesky(a))


def woodbury_inverse(psi, lam):
    """Omega = (Lam Lam^T + diag(psi))^-1 using a d x d inner solve only."""
    psi, lam = _check_woodbury_args(psi, lam)
    out = np.empty((lam.shape[0], lam.shape[0]))
    ok, _ = _engine.woodbury_omega(psi, lam, out)
    if not ok:
        raise NotPositiveDefinite("capacitance matrix failed Cholesky")
    return out


def woodbury_logdet_omega(psi, lam):
    """log|Omega| = -sum(log psi) - log|I_d + Lam^T diag(1/psi) Lam|."""
    psi, lam = _check_woodbury_args(psi, lam)
    out = np.empty((lam.shape[0], lam.shape[0]))
    ok, logdet = _engine.woodbury_omega(psi, lam, out)
    if not ok:
        raise NotPositiveDefinite("capacitance matrix failed Cholesky")
    return logdet


def _check_woodbury_args(psi, lam):
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    if lam.ndim != 2:
        raise DimMismatch("loading matrix must be 2-d")
    if psi.ndim != 1 or psi.shape[0] != lam.shape[0]:
        raise DimMismatch("psi length must match the loading matrix rows")
    if lam.shape[1] > lam.shape[0]:
        raise DimMismatch("more columns than rows defeats the low-rank shortcut")
    if not np.all(psi > 0):
        raise ValueError("psi must be strictly positive")
    return psi, lam


def trace_prod(a, b):
    """tr(A @ B) as sum_ij A_ij * B_ji, without forming the product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatch(f"incompatible shapes {a.shape} and {b.shape}")
    return float(np.sum(a * b.T))
