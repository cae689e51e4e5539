"""Numerically guarded factorizations and solves for positive definite matrices."""

from typing import NamedTuple

import numpy as np
from scipy import linalg as sla

from .errors import DimensionError, SingularMatrixError

# Jitter escalation: start at JITTER_START x mean diagonal, multiply by
# JITTER_GROWTH per retry, give up beyond JITTER_MAX x mean diagonal.
JITTER_START = 1e-6
JITTER_GROWTH = 10.0
JITTER_MAX = 1e-2


def jitter_cholesky(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a symmetric matrix, adding diagonal jitter on failure.

    Returns (L, jitter) with L @ L.T == A + jitter * I. Raises
    SingularMatrixError once the jitter ceiling is exceeded.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    try:
        return sla.cholesky(A, lower=True), 0.0
    except sla.LinAlgError:
        pass
    mean_diag = float(np.mean(np.diag(A)))
    if not np.isfinite(mean_diag) or mean_diag <= 0.0:
        raise SingularMatrixError(
            f"matrix is not positive definite (mean diagonal {mean_diag:g})"
        )
    jitter = JITTER_START * mean_diag
    eye = np.eye(A.shape[0])
    while jitter <= JITTER_MAX * mean_diag:
        try:
            return sla.cholesky(A + jitter * eye, lower=True), jitter
        except sla.LinAlgError:
            jitter *= JITTER_GROWTH
    raise SingularMatrixError(
        f"matrix is not positive definite even with jitter {JITTER_MAX * mean_diag:g}"
    )


class PsdSolve(NamedTuple):
    x: np.ndarray
    logdet: float
    jitter: float


def stable_psd_solve(A: np.ndarray, B: np.ndarray) -> PsdSolve:
    """Solve A @ X = B for symmetric positive definite A.

    Uses a Cholesky factorization with escalating diagonal jitter; reports the
    jitter that was needed alongside the solution and log-determinant of the
    (jittered) matrix.
    """
    B = np.asarray(B, dtype=float)
    L, jitter = jitter_cholesky(A)
    if B.shape[0] != L.shape[0]:
        raise DimensionError(
            f"right-hand side has {B.shape[0]} rows, matrix is {L.shape[0]}x{L.shape[0]}"
        )
    x = sla.cho_solve((L, True), B)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return PsdSolve(x, logdet, jitter)


def chol_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve using an existing lower Cholesky factor."""
    return sla.cho_solve((L, True), B)


def chol_logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_inverse(L: np.ndarray) -> np.ndarray:
    return sla.cho_solve((L, True), np.eye(L.shape[0]))
