"""
Adaptive Manifold Prototypes

Part-based prototype classification where every class owns an orthonormal
basis on the Stiefel manifold and a sparse capacity vector that decides how
many of its directions stay active. Includes a synthetic collapse lab, a
finite-difference gradient checker and additive per-direction explanations.
"""

__version__ = "0.1.0"
__author__ = "AMP Prototypes contributors"

from .model import AMPModel
from .amp_head import ClassSubspace, LossWeights
from .modules.config_loader import ConfigLoader, SyntheticSpec, TrainingConfig
__license__ = "GPL-3.0"

__all__ = ["AMPModel", "ClassSubspace", "LossWeights", "ConfigLoader", "SyntheticSpec",
           "TrainingConfig"]

# Package metadata
__title__ = "amp-prototypes"
__description__ = "Stiefel-constrained class subspaces with adaptive capacity for prototype learning"
__long_description__ = __doc__

# Version information
VERSION = (0, 1, 0)
__version_info__ = VERSION
