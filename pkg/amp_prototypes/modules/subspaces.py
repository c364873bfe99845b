"""Class subspaces: Stiefel bases and capacity vectors for every class."""

from typing import List, Optional

import numpy as np

from ..amp_head import ClassSubspace
from ..capacity import ActiveSet, active_set, prox_step
from ..stiefel import (DRIFT_TOLERANCE, orthonormality_residual, random_stiefel,
                       reorthonormalize, rsgd_step)
from .base import BaseModule


class SubspaceModule(BaseModule):
    """Manage ``U`` (``C x D x K``) and ``sigma`` (``C x K``)."""

    def __init__(self, model):
        super().__init__(model)
        self.bases = np.zeros((0, 0, 0))
        self.capacities = np.zeros((0, 0))

    def initialize(self, C: int, D: int, K: int, seed: int) -> None:
        """Seed class ``c`` with ``random_stiefel(D, K, seed + c)`` and unit capacities."""
        self._validate_positive_number(C, "C")
        self.bases = np.stack([random_stiefel(D, K, seed + c) for c in range(C)])
        self.capacities = np.ones((C, K))

    @property
    def C(self) -> int:
        return self.bases.shape[0]

    @property
    def K(self) -> int:
        return self.bases.shape[2]

    def subspace(self, c: int) -> ClassSubspace:
        return ClassSubspace(self.bases[c].copy(), self.capacities[c].copy())

    def subspaces(self) -> List[ClassSubspace]:
        return [self.subspace(c) for c in range(self.C)]

    def active_set(self, c: int) -> ActiveSet:
        return active_set(self.capacities[c])

    def active_ranks(self) -> List[int]:
        return [int(np.count_nonzero(row > 0.0)) for row in self.capacities]

    def residuals(self) -> List[float]:
        return [orthonormality_residual(U) for U in self.bases]

    def step(self, grad_bases: np.ndarray, grad_capacities: np.ndarray, lr: float, lam: float,
             update_capacity: bool = True, capacity_lr: Optional[float] = None) -> None:
        """Riemannian step on every basis, then a proximal step on every capacity.

        Classes are updated in index order. Capacities step with *capacity_lr*
        when given, otherwise with *lr*.
        """
        self._validate_positive_number(lr, "lr")
        if capacity_lr is None:
            capacity_lr = lr
        self._validate_positive_number(capacity_lr, "capacity_lr")
        self._validate_non_negative_number(lam, "lam")
        grad_bases = self._validate_shape(grad_bases, self.bases.shape, "basis gradient")
        grad_capacities = self._validate_shape(grad_capacities, self.capacities.shape,
                                               "capacity gradient")
        for c in range(self.C):
            self.bases[c] = rsgd_step(self.bases[c], grad_bases[c], lr)
            if update_capacity:
                self.capacities[c] = prox_step(self.capacities[c], grad_capacities[c],
                                               capacity_lr, lam)

    def reorthonormalize(self, tolerance: float = DRIFT_TOLERANCE) -> None:
        for c in range(self.C):
            self.bases[c] = reorthonormalize(self.bases[c], tolerance)

    def to_bytes(self) -> bytes:
        chunks = []
        for c in range(self.C):
            chunks.append(self._pack_f64(self.bases[c], order='F'))
            chunks.append(self._pack_f64(self.capacities[c]))
        return b''.join(chunks)

    def load_from_bytes(self, payload: memoryview, offset: int, dims: dict) -> int:
        C, D, K = dims['C'], dims['D'], dims['K']
        bases = np.empty((C, D, K))
        capacities = np.empty((C, K))
        for c in range(C):
            flat, offset = self._read_f64(payload, offset, D * K, f"basis of class {c}")
            bases[c] = flat.reshape((D, K), order='F')
            capacities[c], offset = self._read_f64(payload, offset, K, f"capacity of class {c}")
        self.bases = bases
        self.capacities = capacities
        return offset

    def validate(self) -> list:
        issues = []
        if not np.all(np.isfinite(self.bases)):
            issues.append("class bases contain NaN or Inf")
            return issues
        for c, residual in enumerate(self.residuals()):
            if residual > DRIFT_TOLERANCE:
                issues.append(f"class {c} basis is off the manifold (residual {residual:.3e})")
        if not np.all(np.isfinite(self.capacities)):
            issues.append("capacities contain NaN or Inf")
        elif np.any(self.capacities < 0.0):
            bad = sorted({int(c) for c in np.argwhere(self.capacities < 0.0)[:, 0]})
            issues.append(f"negative capacity in classes {bad}")
        return issues
