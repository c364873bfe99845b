"""Stiefel-manifold geometry for the class bases.

All functions are pure: they never modify their inputs and return fresh
arrays. Points on ``St(D, K)`` are plain ``float64`` arrays of shape
``(D, K)`` with orthonormal columns; the embedded Euclidean metric is used
throughout, so the tangent projection is ``G - U sym(U^T G)`` and the
retraction is the (sign-fixed) Q factor of ``U + xi``.
"""

import logging
from typing import Tuple

import numpy as np

from .errors import NonFiniteError, RankDeficientError, ShapeError

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-12
DRIFT_TOLERANCE = 1e-8


def _as_matrix(A: np.ndarray, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return A


def qr_factor(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Reduced QR factorization with a positive ``R`` diagonal.

    LAPACK's Householder QR is sign-ambiguous; flipping the columns of ``Q``
    (and rows of ``R``) whose diagonal entry is negative makes the
    factorization unique, so identical inputs give identical bits.

    Parameters
    ----------
    A:
        ``D x K`` matrix with ``D >= K``.

    Returns
    -------
    tuple of numpy.ndarray
        ``Q`` (``D x K``, orthonormal columns) and ``R`` (``K x K`` upper
        triangular, strictly positive diagonal).

    Raises
    ------
    RankDeficientError
        If any ``|R_kk| <= 1e-12``.
    """
    A = _as_matrix(A, "A")
    D, K = A.shape
    if K > D:
        raise ShapeError(f"qr_factor needs rows >= cols, got {D}x{K}")

    Q, R = np.linalg.qr(A, mode='reduced')
    diag = np.diag(R)
    if np.any(np.abs(diag) <= RANK_TOLERANCE):
        raise RankDeficientError(
            f"matrix is numerically rank deficient (min |R_kk| = {np.min(np.abs(diag)):.3e})"
        )
    signs = np.where(diag < 0.0, -1.0, 1.0)
    Q = Q * signs[np.newaxis, :]
    R = R * signs[:, np.newaxis]
    return Q, R


def random_stiefel(D: int, K: int, seed: int) -> np.ndarray:
    """Draw a point of ``St(D, K)`` as the Q factor of a seeded Gaussian matrix."""
    if K < 1 or D < 1:
        raise ShapeError(f"D and K must be positive, got D={D}, K={K}")
    if K > D:
        raise ShapeError(f"K={K} cannot exceed D={D} on the Stiefel manifold")
    rng = np.random.default_rng(seed)
    Q, _ = qr_factor(rng.standard_normal((D, K)))
    return Q


def orthonormality_residual(U: np.ndarray) -> float:
    """Return ``||U^T U - I||_F``."""
    U = np.asarray(U, dtype=np.float64)
    K = U.shape[1]
    return float(np.linalg.norm(U.T @ U - np.eye(K)))


def _check_pair(U: np.ndarray, G: np.ndarray, name: str) -> Tuple[np.ndarray, np.ndarray]:
    U = _as_matrix(U, "U")
    G = _as_matrix(G, name)
    if U.shape != G.shape:
        raise ShapeError(f"{name} shape {G.shape} does not match basis shape {U.shape}")
    return U, G


def tangent_project(U: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Project an ambient matrix onto the tangent space at ``U``.

    ``xi = G - U (U^T G + G^T U) / 2``; the result satisfies
    ``U^T xi + xi^T U = 0`` and projecting twice changes nothing.
    """
    U, G = _check_pair(U, G, "G")
    UtG = U.T @ G
    return G - U @ ((UtG + UtG.T) / 2.0)


def retract(U: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """QR retraction: the Q factor of ``U + xi``."""
    U, xi = _check_pair(U, xi, "xi")
    Q, _ = qr_factor(U + xi)
    return Q


def rsgd_step(U: np.ndarray, ambient_grad: np.ndarray, lr: float) -> np.ndarray:
    """One Riemannian SGD step: ``retract(U, -lr * tangent_project(U, G))``."""
    if not lr > 0:
        raise ValueError(f"lr must be a positive number, got {lr}")
    xi = tangent_project(U, ambient_grad)
    return retract(U, -lr * xi)


def reorthonormalize(U: np.ndarray, tolerance: float = DRIFT_TOLERANCE) -> np.ndarray:
    """Re-run QR on ``U`` if its orthonormality residual exceeds *tolerance*."""
    residual = orthonormality_residual(U)
    if residual <= tolerance:
        return U
    logger.warning("Basis drifted off the manifold (residual %.3e); re-orthonormalizing", residual)
    Q, _ = qr_factor(U)
    return Q
