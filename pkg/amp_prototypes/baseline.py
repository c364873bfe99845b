"""Unconstrained Euclidean prototype baseline.

Each class owns ``K`` free prototype vectors. A sample's score for prototype
``p`` is the negative squared distance to its nearest feature patch,
``S = max_hw -||F_hw - p||^2``, and a linear layer maps the ``C*K`` scores to
logits. Prototypes are periodically snapped onto their nearest training
patch of the same class. Nothing keeps a class's prototypes apart, which is
what the collapse experiments measure.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .amp_head import log_softmax
from .dataset_io import Dataset
from .errors import ShapeError
from .modules.backbone import BackboneParams, embed_backward_batch, embed_batch, init_backbone
from .modules.config_loader import BaselineConfig, TrainingConfig
from .schedule import cosine_lr, total_steps

logger = logging.getLogger(__name__)


@dataclass
class EuclideanPrototypes:
    """Free prototype vectors stacked as ``(C, D, K)``; class ``c`` owns ``P_c = vectors[c]``."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 3:
            raise ShapeError(f"prototypes must be C x D x K, got shape {self.vectors.shape}")

    @property
    def C(self) -> int:
        return self.vectors.shape[0]

    @property
    def D(self) -> int:
        return self.vectors.shape[1]

    @property
    def K(self) -> int:
        return self.vectors.shape[2]

    def matrix(self, c: int) -> np.ndarray:
        return self.vectors[c]


@dataclass
class BaselineModel:
    """Backbone, prototypes and the linear layer over similarity scores."""

    backbone: BackboneParams
    prototypes: EuclideanPrototypes
    fc: np.ndarray                  # (C, C*K)
    step: int = 0
    epoch: int = 0


@dataclass
class BaselineForward:
    scores: np.ndarray              # (B, C, K)
    nearest: np.ndarray             # (B, C, K) patch index of each score
    logits: np.ndarray              # (B, C)


@dataclass
class BaselineReport:
    epoch: int
    ce: float
    accuracy: float
    projected: bool = False


def _flat(F: np.ndarray) -> np.ndarray:
    return F.reshape(F.shape[0], F.shape[1], -1)


def baseline_forward_batch(X: np.ndarray, P: np.ndarray, fc: np.ndarray) -> BaselineForward:
    """Scores and logits for flattened features ``X`` (``B x D x L``)."""
    diff = X[:, np.newaxis, :, np.newaxis, :] - P[np.newaxis, :, :, :, np.newaxis]
    dist = np.sum(diff * diff, axis=2)                       # (B, C, K, L)
    nearest = np.argmin(dist, axis=-1)
    scores = -np.take_along_axis(dist, nearest[..., np.newaxis], axis=-1)[..., 0]
    logits = scores.reshape(scores.shape[0], -1) @ fc.T
    return BaselineForward(scores=scores, nearest=nearest, logits=logits)


def baseline_forward(F: np.ndarray, protos: EuclideanPrototypes) -> np.ndarray:
    """``S_ck = max_hw -||F_hw - p_ck||^2`` flattened class-major to ``C*K`` scores."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 3 or F.shape[0] != protos.D:
        raise ShapeError(f"feature tensor shape {F.shape} does not match D={protos.D}")
    no_layer = np.zeros((protos.C, protos.C * protos.K))
    fwd = baseline_forward_batch(_flat(F[np.newaxis]), protos.vectors, no_layer)
    return fwd.scores[0].reshape(-1)


def baseline_backward(X: np.ndarray, labels: np.ndarray, P: np.ndarray, fc: np.ndarray,
                      fwd: BaselineForward) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Gradients of the batch-mean cross-entropy.

    Returns
    -------
    tuple
        ``(dL/dP, dL/dfc, dL/dX, mean ce)``.
    """
    B, D, L = X.shape
    batch = np.arange(B)
    log_q = log_softmax(fwd.logits)
    ce = float(-np.mean(log_q[batch, labels]))
    grad_z = np.exp(log_q)
    grad_z[batch, labels] -= 1.0
    grad_z /= B

    flat_scores = fwd.scores.reshape(B, -1)
    grad_fc = grad_z.T @ flat_scores
    grad_s = (grad_z @ fc).reshape(fwd.scores.shape)         # (B, C, K)

    patches = X.transpose(0, 2, 1)                           # (B, L, D)
    b_idx = np.broadcast_to(batch[:, np.newaxis, np.newaxis], fwd.nearest.shape)
    picked = patches[b_idx, fwd.nearest]                     # (B, C, K, D)
    diff = picked - P.transpose(0, 2, 1)[np.newaxis]         # x - p
    weighted = grad_s[..., np.newaxis] * diff
    grad_p = 2.0 * weighted.sum(axis=0).transpose(0, 2, 1)   # (C, D, K)

    grad_patches = np.zeros_like(patches)
    np.add.at(grad_patches, (b_idx, fwd.nearest), -2.0 * weighted)
    return grad_p, grad_fc, grad_patches.transpose(0, 2, 1), ce


def _class_patches(dataset: Dataset, backbone: BackboneParams, c: int) -> np.ndarray:
    indices = dataset.require_class(c)
    F = embed_batch(dataset.raw[indices], backbone)
    return _flat(F).transpose(0, 2, 1).reshape(-1, F.shape[1])


def init_baseline(dataset: Dataset, D: int, K: int, seed: int,
                  init_noise: float = 0.5) -> BaselineModel:
    """Start each prototype at a salient class patch plus isotropic noise.

    Class ``c`` takes its ``K`` highest-norm training patches (cycling when
    there are fewer) and adds Gaussian noise whose scale is ``init_noise``
    times the patch norm over ``sqrt(D)``. The linear layer starts at ``+1``
    for a class's own prototypes and ``-0.5`` elsewhere.
    """
    C = dataset.num_classes
    backbone = init_backbone(D, dataset.channels, seed)
    rng = np.random.default_rng(seed)
    vectors = np.empty((C, D, K))
    for c in range(C):
        patches = _class_patches(dataset, backbone, c)
        norms = np.linalg.norm(patches, axis=1)
        order = np.argsort(-norms, kind='stable')
        for k in range(K):
            patch = patches[order[k % len(order)]]
            scale = init_noise * np.linalg.norm(patch) / np.sqrt(D)
            vectors[c, :, k] = patch + scale * rng.standard_normal(D)
    fc = np.full((C, C * K), -0.5)
    for c in range(C):
        fc[c, c * K:(c + 1) * K] = 1.0
    return BaselineModel(backbone=backbone, prototypes=EuclideanPrototypes(vectors), fc=fc)


def project_prototypes(protos: EuclideanPrototypes, dataset: Dataset,
                       backbone: BackboneParams) -> EuclideanPrototypes:
    """Replace every prototype with its nearest same-class training patch.

    Ties resolve to the first patch in (sample, h, w) order.

    Raises
    ------
    EmptyClassError
        If a class has no training samples.
    """
    vectors = protos.vectors.copy()
    for c in range(protos.C):
        patches = _class_patches(dataset, backbone, c)
        for k in range(protos.K):
            diff = patches - protos.vectors[c, :, k]
            dist = np.sum(diff * diff, axis=1)
            vectors[c, :, k] = patches[int(np.argmin(dist))]
    return EuclideanPrototypes(vectors)


def evaluate_baseline(model: BaselineModel, dataset: Dataset,
                      batch_size: int = 256) -> Tuple[float, float]:
    """Accuracy and mean cross-entropy."""
    dataset.require_samples()
    correct = 0
    ce_sum = 0.0
    for idx in dataset.batches(batch_size):
        X = _flat(embed_batch(dataset.raw[idx], model.backbone))
        labels = dataset.labels[idx]
        fwd = baseline_forward_batch(X, model.prototypes.vectors, model.fc)
        log_q = log_softmax(fwd.logits)
        ce_sum += float(-np.sum(log_q[np.arange(len(idx)), labels]))
        correct += int(np.sum(np.argmax(fwd.logits, axis=1) == labels))
    return correct / len(dataset), ce_sum / len(dataset)


def train_baseline_epoch(model: BaselineModel, dataset: Dataset, cfg: TrainingConfig,
                         baseline_cfg: BaselineConfig,
                         lr_fn: Optional[Callable[[int], float]] = None
                         ) -> Tuple[BaselineModel, BaselineReport]:
    """One epoch of plain SGD on backbone, prototypes and linear layer.

    The prototypes are projected after every ``project_every``-th epoch and
    after the final epoch of the run.
    """
    dataset.require_samples()
    epoch = model.epoch
    T = total_steps(len(dataset), cfg)
    rng = np.random.default_rng(cfg.seed ^ epoch)
    order = rng.permutation(len(dataset))

    backbone = model.backbone.copy()
    P = model.prototypes.vectors.copy()
    fc = model.fc.copy()
    step = model.step
    ce_sum = 0.0
    correct = 0

    for idx in dataset.batches(cfg.batch_size, order):
        raw = dataset.raw[idx]
        labels = dataset.labels[idx]
        F = embed_batch(raw, backbone)
        X = _flat(F)
        fwd = baseline_forward_batch(X, P, fc)
        grad_p, grad_fc, grad_x, ce = baseline_backward(X, labels, P, fc, fwd)
        ce_sum += ce * len(idx)
        correct += int(np.sum(np.argmax(fwd.logits, axis=1) == labels))

        lr = lr_fn(step) if lr_fn is not None else cosine_lr(min(step, T), T, cfg.lr_max, cfg.lr_min)
        if lr > 0:
            grad_w, grad_b = embed_backward_batch(grad_x.reshape(F.shape), raw, backbone)
            backbone = BackboneParams(backbone.weight - lr * grad_w, backbone.bias - lr * grad_b)
            P = P - lr * grad_p
            fc = fc - lr * grad_fc
        step += 1

    protos = EuclideanPrototypes(P)
    projected = (epoch + 1) % baseline_cfg.project_every == 0 or epoch + 1 == cfg.epochs
    if projected:
        protos = project_prototypes(protos, dataset, backbone)
    updated = BaselineModel(backbone=backbone, prototypes=protos, fc=fc,
                            step=step, epoch=epoch + 1)
    report = BaselineReport(epoch=epoch, ce=ce_sum / len(dataset),
                            accuracy=correct / len(dataset), projected=projected)
    logger.info("Baseline epoch %d: ce=%.4f acc=%.3f%s", epoch, report.ce, report.accuracy,
                " (projected)" if projected else "")
    return updated, report


def fit_baseline(dataset: Dataset, cfg: TrainingConfig, baseline_cfg: BaselineConfig,
                 callback: Optional[Callable[[BaselineModel, BaselineReport], None]] = None
                 ) -> Tuple[BaselineModel, List[BaselineReport]]:
    """Initialize and train the baseline for ``cfg.epochs`` epochs."""
    model = init_baseline(dataset, cfg.feature_depth, cfg.K, cfg.seed, baseline_cfg.init_noise)
    reports = []
    for _ in range(cfg.epochs):
        model, report = train_baseline_epoch(model, dataset, cfg, baseline_cfg)
        reports.append(report)
        if callback is not None:
            callback(model, report)
    return model, reports
