"""Per-location linear feature extractor."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import NonFiniteError, ShapeError
from .base import BaseModule


@dataclass
class BackboneParams:
    """Weight ``D x D_in`` and bias ``D`` of the 1x1 embedding."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"backbone weight {self.weight.shape} and bias {self.bias.shape} are inconsistent"
            )

    @property
    def D(self) -> int:
        return self.weight.shape[0]

    @property
    def D_in(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> 'BackboneParams':
        return BackboneParams(self.weight.copy(), self.bias.copy())


def _check_raw(raw: np.ndarray, params: BackboneParams, batched: bool) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    ndim = 4 if batched else 3
    if raw.ndim != ndim:
        raise ShapeError(f"raw input must have {ndim} dimensions, got shape {raw.shape}")
    channels = raw.shape[1] if batched else raw.shape[0]
    if channels != params.D_in:
        raise ShapeError(f"raw input has {channels} channels, backbone expects {params.D_in}")
    if not np.all(np.isfinite(raw)):
        raise NonFiniteError("raw input contains NaN or Inf")
    return raw


def embed(raw: np.ndarray, params: BackboneParams) -> np.ndarray:
    """``F_hw = W raw_hw + b`` at every location; returns ``D x H x W``."""
    raw = _check_raw(raw, params, batched=False)
    return np.einsum('di,ihw->dhw', params.weight, raw) + params.bias[:, np.newaxis, np.newaxis]


def embed_batch(raw: np.ndarray, params: BackboneParams) -> np.ndarray:
    """Batched :func:`embed`: ``(B, D_in, H, W)`` -> ``(B, D, H, W)``."""
    raw = _check_raw(raw, params, batched=True)
    return (np.einsum('di,bihw->bdhw', params.weight, raw)
            + params.bias[np.newaxis, :, np.newaxis, np.newaxis])


def embed_backward(upstream: np.ndarray, raw: np.ndarray,
                   params: BackboneParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine gradients summed over locations.

    Returns
    -------
    tuple of numpy.ndarray
        ``(dL/dW, dL/db, dL/draw)``.
    """
    raw = _check_raw(raw, params, batched=False)
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = (params.D,) + raw.shape[1:]
    if upstream.shape != expected:
        raise ShapeError(f"upstream gradient must have shape {expected}, got {upstream.shape}")
    grad_w = np.einsum('dhw,ihw->di', upstream, raw)
    grad_b = upstream.sum(axis=(1, 2))
    grad_raw = np.einsum('di,dhw->ihw', params.weight, upstream)
    return grad_w, grad_b, grad_raw


def embed_backward_batch(upstream: np.ndarray, raw: np.ndarray,
                         params: BackboneParams) -> Tuple[np.ndarray, np.ndarray]:
    """Weight and bias gradients summed over a batch; ``upstream`` is ``(B, D, H, W)``."""
    grad_w = np.einsum('bdhw,bihw->di', upstream, raw)
    grad_b = upstream.sum(axis=(0, 2, 3))
    return grad_w, grad_b


def init_backbone(D: int, D_in: int, seed: int) -> BackboneParams:
    """Uniform ``[-1/sqrt(D_in), 1/sqrt(D_in)]`` weights, zero bias."""
    if D < 1 or D_in < 1:
        raise ShapeError(f"backbone dimensions must be positive, got D={D}, D_in={D_in}")
    bound = 1.0 / np.sqrt(D_in)
    rng = np.random.default_rng(seed)
    weight = rng.uniform(-bound, bound, size=(D, D_in))
    return BackboneParams(weight, np.zeros(D))


class BackboneModule(BaseModule):
    """Own the backbone parameters of an :class:`AMPModel`."""

    def __init__(self, model, params: BackboneParams = None):
        super().__init__(model)
        self.params = params

    def initialize(self, D: int, D_in: int, seed: int) -> None:
        self.params = init_backbone(D, D_in, seed)

    def embed(self, raw: np.ndarray) -> np.ndarray:
        return embed(raw, self.params)

    def embed_batch(self, raw: np.ndarray) -> np.ndarray:
        return embed_batch(raw, self.params)

    def sgd_step(self, grad_w: np.ndarray, grad_b: np.ndarray, lr: float) -> None:
        """Plain Euclidean step on ``W`` and ``b``."""
        self._validate_positive_number(lr, "lr")
        grad_w = self._validate_shape(grad_w, self.params.weight.shape, "weight gradient")
        grad_b = self._validate_shape(grad_b, self.params.bias.shape, "bias gradient")
        self.params = BackboneParams(self.params.weight - lr * grad_w,
                                     self.params.bias - lr * grad_b)

    def to_bytes(self) -> bytes:
        return self._pack_f64(self.params.weight) + self._pack_f64(self.params.bias)

    def load_from_bytes(self, payload: memoryview, offset: int, dims: dict) -> int:
        D, D_in = dims['D'], dims['D_in']
        weight, offset = self._read_f64(payload, offset, D * D_in, "backbone weight")
        bias, offset = self._read_f64(payload, offset, D, "backbone bias")
        self.params = BackboneParams(weight.reshape(D, D_in), bias)
        return offset

    def validate(self) -> list:
        issues = []
        if self.params is None:
            return ["backbone is not initialized"]
        if not np.all(np.isfinite(self.params.weight)) or not np.all(np.isfinite(self.params.bias)):
            issues.append("backbone parameters contain NaN or Inf")
        return issues
