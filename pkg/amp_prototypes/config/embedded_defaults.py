"""
Embedded default parameters for AMP training and experiments.

Values that have a published full-scale counterpart (K, lambda, gamma1,
gamma2, batch size, learning-rate range) use it; everything else is sized for
desk-scale synthetic runs. Kept as Python data so the package works without
any data files next to it.
"""

from typing import Dict, Any

DEFAULT_PARAMETERS: Dict[str, Any] = {
    "training": {
        "epochs": 60,
        "batch_size": 32,
        "lr_max": 0.001,
        "lr_min": 0.00001,
        "K": 10,
        "feature_depth": 16,
        "seed": 0,
        "checkpoint_every": 10,
        "freeze_capacity": False,
        "reorthonormalize_every": 100,
        "capacity_lr_scale": 1.0,
    },
    "loss": {
        "gamma1": 0.01,
        "gamma2": 0.01,
        "lambda": 0.0001,
    },
    "synthetic": {
        "classes": 10,
        "channels": 16,
        "height": 6,
        "width": 6,
        "parts": 3,
        "part_scale": 3.0,
        "noise": 0.1,
        "samples_per_class": 40,
        "seed": 0,
        "visible_parts": 0,
    },
    "baseline": {
        "init_noise": 0.5,
        "project_every": 10,
    },
    "rank_recovery": {
        "epochs": 60,
        "lr_max": 0.1,
        "lr_min": 0.001,
        "capacity_lr_scale": 4.0,
        "K": 10,
        "lambda": 0.01,
        "parts": 3,
        "visible_parts": 2,
    },
    "collapse_demo": {
        "epochs": 60,
        "noise": 0.01,
        "parts": 1,
        "K": 5,
    },
    "sweep": {
        "param": "lambda",
        "values": [0.00001, 0.001, 0.1],
        "test_fraction": 0.25,
    },
    "explain": {
        "sample": 0,
        "class_override": None,
    },
    "paths": {
        "data": "data.ampd",
        "checkpoint": "model.ampc",
        "out": "./output",
    },
}


def get_default_parameters() -> Dict[str, Any]:
    """Return the embedded default parameters."""
    return DEFAULT_PARAMETERS
