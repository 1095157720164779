"""Probability product kernel over transition rows and the log-det diversity term.

For rows ``A_i`` of a transition matrix the normalised kernel is::

    K(A_i, A_j) = sum_x (A_ix A_jx)^rho / sqrt(sum_x A_ix^(2 rho) * sum_x A_jx^(2 rho))

Writing ``S = A**rho`` and ``U = diag(1/||S_i||) S`` gives ``K = U U^T`` with
``U`` square, hence ``log det K = 2 log|det S| - sum_i log sum_x A_ix^(2 rho)``.
That identity yields the exact gradient used by :func:`log_det_gradient`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

__all__ = [
    "DEFAULT_RHO",
    "DET_FLOOR",
    "KernelMatrix",
    "SingularKernelError",
    "product_kernel",
    "normalized_kernel",
    "kernel_matrix",
    "log_det_kernel",
    "log_det_gradient",
    "printed_log_det_gradient",
    "check_gradient",
    "bhattacharyya_distance",
    "mean_pairwise_diversity",
    "pairwise_diversity",
]

DEFAULT_RHO = 0.5
DET_FLOOR = 1e-300
_LOG_DET_FLOOR = np.log(DET_FLOOR)


class SingularKernelError(np.linalg.LinAlgError):
    """The kernel matrix of the transition rows is (numerically) singular."""


def _pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"distributions must be 1-D of equal length, got {p.shape} and {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("distributions must be non-negative")
    return p, q


def product_kernel(p, q, rho=DEFAULT_RHO):
    """Unnormalised probability product kernel ``sum_x p_x^rho q_x^rho``."""
    if rho <= 0:
        raise ValueError("rho must be > 0")
    p, q = _pair(p, q)
    return float(np.sum((p ** rho) * (q ** rho)))


def normalized_kernel(p, q, rho=DEFAULT_RHO):
    """Product kernel divided by the geometric mean of the two self-kernels."""
    kpp = product_kernel(p, p, rho)
    kqq = product_kernel(q, q, rho)
    if kpp <= 0 or kqq <= 0:
        raise ValueError("normalized kernel undefined for an all-zero vector")
    return product_kernel(p, q, rho) / np.sqrt(kpp * kqq)


def _unit_rows(a, rho):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.any(a < 0):
        raise ValueError("transition matrix has negative entries")
    s = a ** rho
    norms = np.sqrt(np.sum(s * s, axis=1))
    if np.any(norms <= 0):
        raise ValueError("normalized kernel undefined for an all-zero row")
    return s / norms[:, None]


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Symmetric, unit-diagonal, PSD similarity matrix over transition rows."""

    entries: np.ndarray
    rho: float = DEFAULT_RHO

    @property
    def k(self):
        return self.entries.shape[0]

    def det(self):
        return float(np.exp(self.log_det()))

    def log_det(self):
        return _log_det_psd(self.entries)


def kernel_matrix(a, rho=DEFAULT_RHO):
    """Normalised kernel matrix between all pairs of rows of ``a``."""
    if rho <= 0:
        raise ValueError("rho must be > 0")
    u = _unit_rows(a, rho)
    entries = u @ u.T
    entries = 0.5 * (entries + entries.T)
    np.fill_diagonal(entries, 1.0)
    entries.setflags(write=False)
    return KernelMatrix(entries, rho)


def _log_det_psd(m):
    try:
        chol = linalg.cholesky(m, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    diag = np.diag(chol)
    if np.any(diag <= 0):
        return -np.inf
    value = 2.0 * float(np.sum(np.log(diag)))
    if not np.isfinite(value) or value < _LOG_DET_FLOOR:
        return -np.inf
    return value


def log_det_kernel(a, rho=DEFAULT_RHO):
    """``log det`` of the normalised kernel matrix; ``-inf`` when it falls below 1e-300."""
    return kernel_matrix(a, rho).log_det()


def log_det_gradient(a, rho=DEFAULT_RHO):
    """Exact gradient of :func:`log_det_kernel` with respect to every entry of ``a``.

    ``G[i, j] = 2 rho [S^-1]_ji A_ij^(rho-1) - 2 rho A_ij^(2rho-1) / sum_x A_ix^(2rho)``
    with ``S = a**rho``. At ``rho = 0.5`` this is
    ``[S^-1]_ji / sqrt(A_ij) - 1 / sum_x A_ix``.

    Raises
    ------
    ValueError
        If any entry of ``a`` is not strictly positive.
    SingularKernelError
        If the kernel matrix is singular.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("transition matrix must be square")
    if not np.all(a > 0):
        raise ValueError("log-det gradient requires strictly positive entries")
    if not np.isfinite(log_det_kernel(a, rho)):
        raise SingularKernelError("kernel matrix of transition rows is singular")
    s = a ** rho
    try:
        s_inv = linalg.inv(s)
    except linalg.LinAlgError as exc:
        raise SingularKernelError(str(exc)) from exc
    row_norm2 = np.sum(a ** (2 * rho), axis=1)
    return (2 * rho * s_inv.T * a ** (rho - 1)
            - 2 * rho * a ** (2 * rho - 1) / row_norm2[:, None])


def printed_log_det_gradient(a):
    """Gradient formula as commonly printed for rho=0.5.

    ``0.5 * sum_m [K^-1]_mi sqrt(A_mj) / sqrt(A_ij)``. On the simplex it equals
    half of :func:`log_det_gradient` up to a per-row constant, which the simplex
    projection discards; kept for comparison only.
    """
    a = np.asarray(a, dtype=float)
    k_inv = linalg.inv(kernel_matrix(a, 0.5).entries)
    return 0.5 * (k_inv.T @ np.sqrt(a)) / np.sqrt(a)


def check_gradient(a, rho=DEFAULT_RHO, h=1e-6):
    """Max relative error between the analytic gradient and central differences."""
    a = np.asarray(a, dtype=float)
    grad = log_det_gradient(a, rho)
    fd = np.empty_like(a)
    for idx in np.ndindex(a.shape):
        up = a.copy()
        down = a.copy()
        up[idx] += h
        down[idx] -= h
        fd[idx] = (log_det_kernel(up, rho) - log_det_kernel(down, rho)) / (2 * h)
    scale = np.maximum(np.abs(fd), 1.0)
    return float(np.max(np.abs(grad - fd) / scale))


def bhattacharyya_distance(p, q):
    """``-ln sum_x sqrt(p_x q_x)``; ``inf`` for disjoint supports."""
    p, q = _pair(p, q)
    bc = float(np.sum(np.sqrt(p * q)))
    if bc <= 0:
        return np.inf
    return max(0.0, -np.log(bc))


def pairwise_diversity(a):
    """Matrix of Bhattacharyya distances between all pairs of rows of ``a``."""
    a = np.asarray(a, dtype=float)
    bc = np.sqrt(a) @ np.sqrt(a).T
    with np.errstate(divide="ignore"):
        d = -np.log(bc)
    d = np.maximum(d, 0.0)
    np.fill_diagonal(d, 0.0)
    return d


def mean_pairwise_diversity(a):
    """Average Bhattacharyya distance over the ``k(k-1)/2`` unordered row pairs.

    Returns
    -------
    value : float
        The mean distance, ``inf`` when any pair has disjoint support.
    infinite : bool
        Whether ``value`` is infinite.
    """
    a = np.asarray(a, dtype=float)
    k = a.shape[0]
    if a.ndim != 2 or k < 2:
        raise ValueError("need a matrix with at least two rows")
    iu = np.triu_indices(k, 1)
    dists = [bhattacharyya_distance(a[i], a[j]) for i, j in zip(*iu)]
    value = float(np.mean(dists))
    return value, bool(np.isinf(value))
