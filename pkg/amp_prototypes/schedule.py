"""Cosine-annealed learning rate shared by every parameter group."""

import math

from .errors import StepError


def cosine_lr(t: int, T: int, lr_max: float, lr_min: float) -> float:
    """``lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2``.

    Raises
    ------
    StepError
        If ``T < 1`` or ``t`` lies outside ``[0, T]``.
    """
    if T < 1:
        raise StepError(f"total steps must be at least 1, got {T}")
    if t < 0 or t > T:
        raise StepError(f"step {t} outside [0, {T}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / T))


def total_steps(num_samples: int, cfg) -> int:
    """Optimizer steps in a full run of ``cfg.epochs`` epochs (at least 1)."""
    per_epoch = -(-num_samples // cfg.batch_size)
    return max(1, cfg.epochs * per_epoch)
