"""Decoder numerics: PCA whitening from the spectral decomposition, LSMR, rank."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .model import ConfigurationError

WHITEN_REL_TOL = 1e-10
LSMR_TOL = 1e-8


def eigh_psd(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric PSD matrix, sorted descending.

    For a PSD matrix this is its singular value decomposition P = U S U'.
    """
    w, V = scipy.linalg.eigh(P, driver="evr", check_finite=False)
    return w[::-1], V[:, ::-1]


def retained_count(eigvals_desc: np.ndarray, rel_tol: float) -> int:
    """Number of leading eigenvalues strictly above rel_tol * max."""
    if eigvals_desc.size == 0:
        return 0
    top = max(float(eigvals_desc[0]), 0.0)
    return int(np.count_nonzero(eigvals_desc > rel_tol * top)) if top > 0 else 0


@dataclass
class Whitener:
    """Linear map M with M P M' = I on the retained subspace of P."""

    M: np.ndarray
    retained: int
    threshold: float


def build_whitener(P: np.ndarray, rel_tol: float = WHITEN_REL_TOL) -> Whitener:
    """PCA whitening transform M = S_r^(-1/2) U_r' from P = U S U'.

    Eigendirections with eigenvalue <= rel_tol * max are dropped, so the
    null space of a singular covariance vanishes from the whitened problem.
    """
    P = np.asarray(P, dtype=float)
    scale = max(1.0, float(np.max(np.abs(P))) if P.size else 1.0)
    if np.max(np.abs(P - P.T)) > 1e-8 * scale:
        raise ConfigurationError("whitener input is not symmetric within 1e-8")
    w, V = eigh_psd(0.5 * (P + P.T))
    k = retained_count(w, rel_tol)
    M = (V[:, :k] / np.sqrt(w[:k])).T
    return Whitener(M=M, retained=k, threshold=rel_tol)


def numerical_rank(P: np.ndarray, rel_tol: float = WHITEN_REL_TOL) -> int:
    """Count of singular values above rel_tol * largest; 0 for a zero matrix."""
    P = np.asarray(P, dtype=float)
    scale = max(1.0, float(np.max(np.abs(P))) if P.size else 1.0)
    if np.max(np.abs(P - P.T)) > 1e-8 * scale:
        raise ConfigurationError("numerical_rank input is not symmetric within 1e-8")
    w = scipy.linalg.eigh(0.5 * (P + P.T), eigvals_only=True, driver="evr", check_finite=False)
    return retained_count(w[::-1], rel_tol)


class SolveInfo(NamedTuple):
    converged: bool
    iterations: int


def lsmr_solve(
    A: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = LSMR_TOL,
    max_iter: int | None = None,
) -> tuple[np.ndarray, SolveInfo]:
    """Least-squares solve of A x ~= b with LSMR, warm-started at x0.

    Solves min_delta ||A delta - (b - A x0)|| and returns x0 + delta, i.e. the
    minimum-norm shift from the initial guess.  When max_iter (default 4 times
    the column count) is reached, the best iterate is returned with
    converged=False.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    if x0 is None:
        x0 = np.zeros(n)
    x0 = np.asarray(x0, dtype=float)
    if A.shape[0] == 0:
        return x0.copy(), SolveInfo(converged=True, iterations=0)
    if max_iter is None:
        max_iter = 4 * n
    x, istop, itn, *_ = scipy.sparse.linalg.lsmr(
        A, b, atol=tol, btol=tol, conlim=0.0, maxiter=max_iter, x0=x0
    )
    return x, SolveInfo(converged=istop != 7, iterations=int(itn))


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Square-root factor L (m x r) with L L' = M for symmetric PSD M.

    Cholesky when positive definite; otherwise a thin eigenfactor with
    negative eigenvalues clipped to zero.
    """
    M = np.asarray(M, dtype=float)
    if not np.any(M):
        return np.zeros((M.shape[0], 0))
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = eigh_psd(0.5 * (M + M.T))
        k = retained_count(w, 1e-14)
        return V[:, :k] * np.sqrt(np.clip(w[:k], 0.0, None))
