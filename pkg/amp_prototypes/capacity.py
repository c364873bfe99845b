"""Nonnegative capacity vectors and their proximal update.

A class keeps one capacity weight per basis direction. The proximal step is
plain gradient descent followed by soft-thresholding onto the nonnegative
orthant, which produces exact zeros; the indices that stay strictly positive
form the class's active set.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import NonFiniteError, ShapeError

PROTECTED_FLOOR = 1e-6


@dataclass(frozen=True)
class ActiveSet:
    """Basis indices with strictly positive capacity."""

    indices: Tuple[int, ...]

    @property
    def rank(self) -> int:
        return len(self.indices)

    def __contains__(self, k: int) -> bool:
        return k in self.indices


def _as_vector(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return v


def protected_index(sigma: np.ndarray) -> int:
    """Index of the largest capacity (lowest index on ties)."""
    return int(np.argmax(sigma))


def prox_step(sigma: np.ndarray, grad: np.ndarray, lr: float, lam: float,
              protect: bool = True) -> np.ndarray:
    """Proximal gradient step ``max(sigma - lr*grad - lr*lam, 0)``.

    Parameters
    ----------
    sigma:
        Current capacity vector (nonnegative).
    grad:
        Gradient of the smooth loss with respect to ``sigma``.
    lr:
        Step size, ``> 0``.
    lam:
        Sparsity weight, ``>= 0``.
    protect:
        Keep the currently largest weight at or above ``1e-6`` so the class
        never loses every direction.

    Returns
    -------
    numpy.ndarray
        Updated capacities; thresholded entries are exactly ``+0.0``.
    """
    sigma = _as_vector(sigma, "sigma")
    grad = _as_vector(grad, "grad")
    if sigma.shape != grad.shape:
        raise ShapeError(f"grad shape {grad.shape} does not match sigma shape {sigma.shape}")
    if not lr > 0:
        raise ValueError(f"lr must be a positive number, got {lr}")
    if not lam >= 0:
        raise ValueError(f"lam must be a non-negative number, got {lam}")

    raw = sigma - lr * grad - lr * lam
    out = np.where(raw > 0.0, raw, 0.0)
    if protect and out.size:
        k = protected_index(sigma)
        if out[k] < PROTECTED_FLOOR:
            out[k] = PROTECTED_FLOOR
    return out


def active_set(sigma: np.ndarray) -> ActiveSet:
    """Indices ``k`` with ``sigma_k > 0`` (strict)."""
    sigma = _as_vector(sigma, "sigma")
    return ActiveSet(tuple(int(k) for k in np.flatnonzero(sigma > 0.0)))


def active_rank(sigma: np.ndarray) -> int:
    return int(np.count_nonzero(np.asarray(sigma) > 0.0))
