"""Decoupled training loop.

Every batch runs one forward/backward pass and then three independent
updates: plain SGD on the backbone and a Riemannian step with QR retraction
on every class basis at the scheduled learning rate, then a proximal step on
every capacity vector at ``capacity_lr_scale`` times that rate. No momentum
is used anywhere.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .amp_head import LossSummary, evaluate_batch, summarize
from .baseline import evaluate_baseline, fit_baseline
from .checkpoint import save_checkpoint
from .dataset_io import Dataset
from .errors import AMPError, ConfigError, ShapeError
from .grad_engine import backward_batch
from .model import AMPModel
from .modules.backbone import embed_backward_batch
from .modules.config_loader import BaselineConfig, TrainingConfig
from .schedule import cosine_lr, total_steps

logger = logging.getLogger(__name__)

__all__ = ['cosine_lr', 'EpochReport', 'Evaluation', 'initialize_model', 'train_epoch',
           'evaluate', 'fit', 'rank_histogram', 'run_ablation', 'run_sweep']

SWEEP_PARAMS = ('lambda', 'gamma1', 'gamma2', 'k')


@dataclass
class EpochReport:
    """Telemetry for one training epoch."""

    epoch: int
    losses: LossSummary
    accuracy: float
    ranks: List[int]
    residual: float
    lr: float

    @property
    def mean_rank(self) -> float:
        return float(np.mean(self.ranks)) if self.ranks else 0.0

    def as_dict(self):
        return {'epoch': self.epoch, 'losses': self.losses.as_dict(), 'accuracy': self.accuracy,
                'ranks': list(self.ranks), 'residual': self.residual, 'lr': self.lr}


@dataclass
class Evaluation:
    accuracy: float
    losses: LossSummary
    predictions: np.ndarray = field(repr=False)


def _check_dims(model: AMPModel, data: Dataset) -> None:
    if data.channels != model.D_in:
        raise ShapeError(f"dataset has {data.channels} channels, model expects {model.D_in}")
    if data.num_classes != model.C:
        raise ShapeError(f"dataset has {data.num_classes} classes, model has {model.C}")


def _features(model: AMPModel, raw: np.ndarray) -> np.ndarray:
    F = model.backbone.embed_batch(raw)
    return F.reshape(F.shape[0], F.shape[1], -1)


def initialize_model(data: Dataset, cfg: TrainingConfig) -> AMPModel:
    """Fresh model sized for *data*."""
    return AMPModel.initialize(data.num_classes, cfg.feature_depth, data.channels, cfg.K, cfg.seed)


class _Accumulator:
    """Sample-weighted running means of the loss terms."""

    def __init__(self):
        self.n = 0
        self.ce = 0.0
        self.sem = 0.0
        self.overlap = 0.0
        self.sparse = 0.0
        self.correct = 0

    def add(self, summary: LossSummary, logits: np.ndarray, labels: np.ndarray) -> None:
        b = len(labels)
        self.n += b
        self.ce += summary.ce * b
        self.sem += summary.sem * b
        self.overlap += summary.overlap * b
        self.sparse += summary.sparse * b
        self.correct += int(np.sum(np.argmax(logits, axis=1) == labels))

    def summary(self, weights) -> LossSummary:
        n = max(self.n, 1)
        return summarize(np.array([self.ce / n]), np.array([self.sem / n]),
                         np.array([self.overlap / n]), self.sparse / n, weights)

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0


def train_epoch(model: AMPModel, data: Dataset, cfg: TrainingConfig,
                lr_fn: Optional[Callable[[int], float]] = None) -> Tuple[AMPModel, EpochReport]:
    """Run one epoch and return the updated model with its report.

    The input model is never modified; the epoch works on a copy, so a numeric
    failure leaves the caller with the epoch-start state.

    Parameters
    ----------
    model:
        State at the start of the epoch.
    data:
        Training set.
    cfg:
        Training configuration.
    lr_fn:
        Optional override mapping the global step to a learning rate. A rate
        of exactly 0 skips every update for that step.
    """
    data.require_samples()
    _check_dims(model, data)
    epoch = model.epoch
    T = total_steps(len(data), cfg)
    order = np.random.default_rng(cfg.seed ^ epoch).permutation(len(data))
    weights = cfg.weights

    work = model.copy()
    acc = _Accumulator()
    lr = 0.0
    try:
        for idx in data.batches(cfg.batch_size, order):
            raw = data.raw[idx]
            labels = data.labels[idx]
            X = _features(work, raw)
            grad_u, grad_sigma, grad_x, summary, fwd = backward_batch(
                X, labels, work.subspaces.bases, work.subspaces.capacities, weights)
            acc.add(summary, fwd.logits, labels)

            lr = lr_fn(work.step) if lr_fn is not None else cosine_lr(
                min(work.step, T), T, cfg.lr_max, cfg.lr_min)
            if lr > 0:
                grad_f = grad_x.reshape((X.shape[0], X.shape[1]) + raw.shape[2:])
                grad_w, grad_b = embed_backward_batch(grad_f, raw, work.backbone.params)
                work.backbone.sgd_step(grad_w, grad_b, lr)
                work.subspaces.step(grad_u, grad_sigma, lr, weights.lam,
                                    update_capacity=not cfg.freeze_capacity,
                                    capacity_lr=lr * cfg.capacity_lr_scale)
            work.step += 1
            if work.step % cfg.reorthonormalize_every == 0:
                work.subspaces.reorthonormalize()
    except (AMPError, FloatingPointError) as e:
        logger.warning("Epoch %d aborted, state rolled back to epoch start: %s", epoch, e)
        raise

    work.epoch = epoch + 1
    report = EpochReport(epoch=epoch, losses=acc.summary(weights), accuracy=acc.accuracy,
                         ranks=work.active_ranks(), residual=work.orthonormality_residual(), lr=lr)
    logger.info("Epoch %d: total=%.4f ce=%.4f sem=%.4f overlap=%.4f acc=%.3f mean_rank=%.2f",
                epoch, report.losses.total, report.losses.ce, report.losses.sem,
                report.losses.overlap, report.accuracy, report.mean_rank)
    return work, report


def evaluate(model: AMPModel, data: Dataset, weights=None, batch_size: int = 256) -> Evaluation:
    """Accuracy and mean loss terms; the model is not modified.

    Raises
    ------
    EmptyDatasetError
        If *data* has no samples.
    """
    data.require_samples()
    _check_dims(model, data)
    weights = weights or TrainingConfig().weights
    acc = _Accumulator()
    predictions = np.empty(len(data), dtype=np.int64)
    U, sigma = model.subspaces.bases, model.subspaces.capacities
    for idx in data.batches(batch_size):
        labels = data.labels[idx]
        X = _features(model, data.raw[idx])
        fwd, _, _, summary = evaluate_batch(X, labels, U, sigma, weights)
        predictions[idx] = np.argmax(fwd.logits, axis=1)
        acc.add(summary, fwd.logits, labels)
    return Evaluation(accuracy=acc.accuracy, losses=acc.summary(weights), predictions=predictions)


def fit(model: AMPModel, data: Dataset, cfg: TrainingConfig,
        checkpoint_dir: Optional[Union[str, Path]] = None,
        lr_fn: Optional[Callable[[int], float]] = None) -> Tuple[AMPModel, List[EpochReport]]:
    """Train for ``cfg.epochs`` epochs, checkpointing every ``checkpoint_every``."""
    reports = []
    for _ in range(cfg.epochs):
        model, report = train_epoch(model, data, cfg, lr_fn)
        reports.append(report)
        if checkpoint_dir is not None and model.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(model, Path(checkpoint_dir) / f"epoch-{model.epoch:04d}.ampc")
    return model, reports


def rank_histogram(ranks: Sequence[int], K: int) -> List[int]:
    """Number of classes at each active rank ``0..K``."""
    counts = [0] * (K + 1)
    for r in ranks:
        if not 0 <= r <= K:
            raise ValueError(f"rank {r} outside [0, {K}]")
        counts[r] += 1
    return counts


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentRow:
    """One line of an ablation or sweep table."""

    variant: str
    accuracy: float
    mean_rank: Optional[float]
    sem: Optional[float]
    overlap: Optional[float]

    def as_dict(self):
        return dataclasses.asdict(self)


def _with_weights(cfg: TrainingConfig, **changes) -> TrainingConfig:
    try:
        weights = dataclasses.replace(cfg.weights, **changes)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return dataclasses.replace(cfg, weights=weights)


def _amp_row(name: str, train: Dataset, test: Dataset, cfg: TrainingConfig) -> ExperimentRow:
    model, _ = fit(initialize_model(train, cfg), train, cfg)
    result = evaluate(model, test, cfg.weights)
    ranks = model.active_ranks()
    return ExperimentRow(variant=name, accuracy=result.accuracy,
                         mean_rank=float(np.mean(ranks)),
                         sem=result.losses.sem, overlap=result.losses.overlap)


def run_ablation(train: Dataset, test: Dataset, cfg: TrainingConfig,
                 baseline_cfg: Optional[BaselineConfig] = None) -> List[ExperimentRow]:
    """Train the full model and each ablated variant on the same data and seed.

    Variants: ``full``, ``no_stiefel`` (Euclidean prototype head),
    ``no_capacity`` (capacities frozen at 1), ``lambda0``, ``no_sem``
    (``gamma1 = 0``) and ``no_overlap`` (``gamma2 = 0``).
    """
    baseline_cfg = baseline_cfg or BaselineConfig()
    rows = [_amp_row('full', train, test, cfg)]

    baseline, _ = fit_baseline(train, cfg, baseline_cfg)
    accuracy, _ = evaluate_baseline(baseline, test)
    rows.append(ExperimentRow('no_stiefel', accuracy, None, None, None))

    variants = [
        ('no_capacity', dataclasses.replace(cfg, freeze_capacity=True)),
        ('lambda0', _with_weights(cfg, lam=0.0)),
        ('no_sem', _with_weights(cfg, gamma1=0.0)),
        ('no_overlap', _with_weights(cfg, gamma2=0.0)),
    ]
    for name, variant_cfg in variants:
        rows.append(_amp_row(name, train, test, variant_cfg))
    for row in rows:
        logger.info("Ablation %-12s acc=%.3f", row.variant, row.accuracy)
    return rows


def run_sweep(train: Dataset, test: Dataset, cfg: TrainingConfig, param: str,
              values: Sequence[float]) -> List[ExperimentRow]:
    """Retrain once per value of *param* (``lambda``, ``gamma1``, ``gamma2`` or ``k``)."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter '{param}', expected one of {SWEEP_PARAMS}")
    variants = []
    for value in values:
        if param == 'lambda':
            variant = _with_weights(cfg, lam=float(value))
        elif param == 'gamma1':
            variant = _with_weights(cfg, gamma1=float(value))
        elif param == 'gamma2':
            variant = _with_weights(cfg, gamma2=float(value))
        else:
            if not float(value).is_integer() or value < 1:
                raise ConfigError(f"k must be a positive integer, got {value}")
            variant = dataclasses.replace(cfg, K=int(value))
        variants.append((f"{param}={value:g}", variant))
    return [_amp_row(name, train, test, variant) for name, variant in variants]
