"""
AMP model state - modular implementation

The model uses composition with nested module objects: a
:class:`BackboneModule` for the Euclidean feature extractor and a
:class:`SubspaceModule` for the class bases and capacities. The model also
keeps the optimizer step and epoch counters.
"""

import copy
import logging
from typing import Any, Dict, List, Optional

import numpy as np

from .amp_head import ClassSubspace
from .modules.backbone import BackboneModule
from .modules.subspaces import SubspaceModule

logger = logging.getLogger(__name__)


class AMPModel:
    """
    Complete AMP model: backbone, class subspaces and training counters.

    Build one with :meth:`initialize` or load one with
    :func:`amp_prototypes.checkpoint.load_checkpoint`.
    """

    def __init__(self):
        """Create an empty model with all modules attached."""
        self.backbone = BackboneModule(self)
        self.subspaces = SubspaceModule(self)
        self.step = 0
        self.epoch = 0

        # Serialization order of the modules
        self.section_order = ['backbone', 'subspaces']

    @classmethod
    def initialize(cls, C: int, D: int, D_in: int, K: int, seed: int = 0) -> 'AMPModel':
        """Create a freshly initialized model.

        Parameters
        ----------
        C, D, D_in, K:
            Class count, feature depth, input channels and basis size.
        seed:
            Backbone seed; class ``c`` draws its basis with ``seed + c``.
        """
        model = cls()
        model.backbone.initialize(D, D_in, seed)
        model.subspaces.initialize(C, D, K, seed)
        logger.debug("Initialized model C=%d D=%d D_in=%d K=%d seed=%d", C, D, D_in, K, seed)
        return model

    # ---- dimensions -----------------------------------------------------

    @property
    def C(self) -> int:
        return self.subspaces.C

    @property
    def D(self) -> int:
        return self.backbone.params.D

    @property
    def D_in(self) -> int:
        return self.backbone.params.D_in

    @property
    def K(self) -> int:
        return self.subspaces.K

    def dims(self) -> Dict[str, int]:
        return {'C': self.C, 'D': self.D, 'D_in': self.D_in, 'K': self.K}

    # ---- convenience ----------------------------------------------------

    def class_subspaces(self) -> List[ClassSubspace]:
        return self.subspaces.subspaces()

    def copy(self) -> 'AMPModel':
        """Deep, bit-exact copy."""
        return copy.deepcopy(self)

    def orthonormality_residual(self) -> float:
        """Largest ``||U_c^T U_c - I||_F`` over classes."""
        residuals = self.subspaces.residuals()
        return max(residuals) if residuals else 0.0

    def active_ranks(self) -> List[int]:
        return self.subspaces.active_ranks()

    def get_module(self, name: str):
        if name not in self.section_order:
            raise KeyError(f"unknown model section: {name}")
        return getattr(self, name)

    def validate(self) -> List[str]:
        """Check every module's invariants.

        Returns
        -------
        list of str
            Human readable problems; empty when the model is valid.
        """
        issues = []
        for name in self.section_order:
            issues.extend(self.get_module(name).validate())
        if not issues and self.subspaces.bases.shape[1] != self.D:
            issues.append(
                f"basis depth {self.subspaces.bases.shape[1]} does not match feature depth {self.D}"
            )
        return issues

    def get_summary(self) -> Dict[str, Any]:
        """Get a summary of the current model."""
        ranks = self.active_ranks()
        return {
            'classes': self.C,
            'feature_depth': self.D,
            'input_channels': self.D_in,
            'basis_size': self.K,
            'active_ranks': ranks,
            'mean_active_rank': float(np.mean(ranks)) if ranks else 0.0,
            'orthonormality_residual': self.orthonormality_residual(),
            'step': self.step,
            'epoch': self.epoch,
        }

    def equals(self, other: Optional['AMPModel']) -> bool:
        """Bitwise equality of every parameter array."""
        if other is None:
            return False
        return (np.array_equal(self.backbone.params.weight, other.backbone.params.weight)
                and np.array_equal(self.backbone.params.bias, other.backbone.params.bias)
                and np.array_equal(self.subspaces.bases, other.subspaces.bases)
                and np.array_equal(self.subspaces.capacities, other.subspaces.capacities))
