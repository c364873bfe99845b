"""Forward-pass mathematics of the manifold prototype head.

The single-sample operations (:func:`projection_energy`, :func:`response_map`,
:func:`class_logits`, :func:`total_loss`, ...) work on :class:`ClassSubspace`
objects and ``D x H x W`` feature tensors. Training goes through
:func:`forward_batch` and :func:`regularizers_batch`, which evaluate the same
quantities for a whole batch on stacked arrays and keep every intermediate
the backward pass in :mod:`amp_prototypes.grad_engine` needs.

Array conventions
-----------------
* ``U``: ``(C, D, K)`` stacked bases, ``sigma``: ``(C, K)`` capacities.
* ``X``: ``(B, D, L)`` features with locations flattened row-major,
  ``l = h * W + w``.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .capacity import ActiveSet
from .errors import LabelError, NonFiniteError, ShapeError


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class ClassSubspace:
    """Orthonormal basis ``U_c`` (``D x K``) with capacities ``sigma_c`` (``K``)."""

    basis: np.ndarray
    capacity: np.ndarray

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.capacity = np.asarray(self.capacity, dtype=np.float64)
        if self.basis.ndim != 2:
            raise ShapeError(f"basis must be 2-D, got shape {self.basis.shape}")
        if self.capacity.shape != (self.basis.shape[1],):
            raise ShapeError(
                f"capacity shape {self.capacity.shape} does not match K={self.basis.shape[1]}"
            )

    @property
    def K(self) -> int:
        return self.basis.shape[1]

    @property
    def D(self) -> int:
        return self.basis.shape[0]


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the composite objective."""

    gamma1: float = 0.01
    gamma2: float = 0.01
    lam: float = 0.0001

    def __post_init__(self):
        for name in ('gamma1', 'gamma2', 'lam'):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")


@dataclass
class LossBreakdown:
    """Per-term loss values for one sample plus its logits and prediction."""

    ce: float
    sem: float
    overlap: float
    sparse: float
    total: float
    logits: np.ndarray
    predicted_class: int


@dataclass
class LossSummary:
    """Batch or epoch means of the loss terms."""

    ce: float = 0.0
    sem: float = 0.0
    overlap: float = 0.0
    sparse: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return {'ce': self.ce, 'sem': self.sem, 'overlap': self.overlap,
                'sparse': self.sparse, 'total': self.total}


@dataclass
class BatchForward:
    """Intermediates of :func:`forward_batch`."""

    A: np.ndarray            # (B, C, K, L) projections U_ck^T x_l
    M: np.ndarray            # (B, C, K, L) squared projections
    argmax: np.ndarray       # (B, C, K) pooled location per direction
    pooled: np.ndarray       # (B, C, K) max_l M
    logits: np.ndarray       # (B, C)


@dataclass
class BatchRegularizers:
    """Intermediates of :func:`regularizers_batch` for the target classes."""

    log_p: np.ndarray        # (B, K, L)
    P: np.ndarray            # (B, K, L)
    mask: np.ndarray         # (B, K) active directions
    entropy: np.ndarray      # (B, K)
    cosine: np.ndarray       # (B, K, K)
    norms: np.ndarray        # (B, K)
    sem: np.ndarray          # (B,)
    overlap: np.ndarray      # (B,)
    ranks: np.ndarray        # (B,)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def stack_subspaces(subspaces: Sequence[ClassSubspace]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack class subspaces into ``(C, D, K)`` bases and ``(C, K)`` capacities."""
    if len(subspaces) == 0:
        raise ShapeError("at least one class subspace is required")
    shapes = {sub.basis.shape for sub in subspaces}
    if len(shapes) != 1:
        raise ShapeError(f"class subspaces have inconsistent shapes: {sorted(shapes)}")
    U = np.stack([sub.basis for sub in subspaces])
    sigma = np.stack([sub.capacity for sub in subspaces])
    return U, sigma


def flatten_features(F: np.ndarray) -> np.ndarray:
    """``(D, H, W)`` -> ``(D, H*W)`` (row-major locations)."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 3:
        raise ShapeError(f"feature tensor must be D x H x W, got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise NonFiniteError("feature tensor contains NaN or Inf")
    return F.reshape(F.shape[0], -1)


def _log_softmax(M: np.ndarray) -> np.ndarray:
    shifted = M - np.max(M, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Max-shifted log-softmax along the last axis."""
    return _log_softmax(np.asarray(z, dtype=np.float64))


# ---------------------------------------------------------------------------
# Single-sample operations
# ---------------------------------------------------------------------------

def projection_energy(f: np.ndarray, sub: ClassSubspace) -> float:
    """Weighted projection energy ``sum_k sigma_k (U_k^T f)^2``."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (sub.D,):
        raise ShapeError(f"feature vector shape {f.shape} does not match D={sub.D}")
    coords = sub.basis.T @ f
    return float(np.sum(sub.capacity * coords ** 2))


def response_map(F: np.ndarray, sub: ClassSubspace, weighted: bool = False) -> np.ndarray:
    """Per-direction energy maps, shape ``(K, H, W)``.

    Unweighted maps ``(U_k^T F_hw)^2`` feed the spatial regularizers; the
    weighted variant multiplies by ``sigma_k`` and is what explanations show.
    """
    F = np.asarray(F, dtype=np.float64)
    X = flatten_features(F)
    if X.shape[0] != sub.D:
        raise ShapeError(f"feature depth {X.shape[0]} does not match D={sub.D}")
    M = (sub.basis.T @ X) ** 2
    if weighted:
        M = sub.capacity[:, np.newaxis] * M
    return M.reshape(sub.K, F.shape[1], F.shape[2])


def spatial_softmax(M: np.ndarray) -> np.ndarray:
    """Softmax over the spatial grid (the last two axes)."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim < 2:
        raise ShapeError(f"response map must have at least 2 dimensions, got {M.ndim}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteError("response map contains NaN or Inf")
    flat = M.reshape(M.shape[:-2] + (-1,))
    return np.exp(_log_softmax(flat)).reshape(M.shape)


def _distribution_rows(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 3:
        return P.reshape(P.shape[0], -1)
    if P.ndim == 2:
        return P
    raise ShapeError(f"spatial distribution must be K x H x W, got shape {P.shape}")


def sem_loss(P: np.ndarray, act: ActiveSet) -> float:
    """Mean spatial entropy over the active directions (0 when none are active)."""
    rows = _distribution_rows(P)
    if act.rank == 0:
        return 0.0
    idx = list(act.indices)
    sub = rows[idx]
    with np.errstate(divide='ignore', invalid='ignore'):
        terms = np.where(sub > 0.0, sub * np.log(sub), 0.0)
    return float(-np.sum(terms) / act.rank)


def overlap_loss(P: np.ndarray, act: ActiveSet) -> float:
    """Mean pairwise cosine between active maps; 0 when fewer than two are active."""
    rows = _distribution_rows(P)
    R = act.rank
    if R < 2:
        return 0.0
    sub = rows[list(act.indices)]
    unit = sub / np.linalg.norm(sub, axis=1, keepdims=True)
    cos = unit @ unit.T
    return float((np.sum(cos) - np.trace(cos)) / (R * (R - 1)))


def class_logits(F: np.ndarray, subspaces: Sequence[ClassSubspace]) -> np.ndarray:
    """``z_c = sum_k sigma_ck max_hw (U_ck^T F_hw)^2`` for every class."""
    U, sigma = stack_subspaces(subspaces)
    X = flatten_features(F)
    if X.shape[0] != U.shape[1]:
        raise ShapeError(f"feature depth {X.shape[0]} does not match D={U.shape[1]}")
    return forward_batch(X[np.newaxis], U, sigma).logits[0]


def total_loss(F: np.ndarray, label: int, subspaces: Sequence[ClassSubspace],
               weights: Optional[LossWeights] = None) -> LossBreakdown:
    """Composite loss for one sample (regularizers on the ground-truth class)."""
    weights = weights or LossWeights()
    U, sigma = stack_subspaces(subspaces)
    X = flatten_features(F)
    if X.shape[0] != U.shape[1]:
        raise ShapeError(f"feature depth {X.shape[0]} does not match D={U.shape[1]}")
    labels = np.array([label])
    fwd, reg, ce, summary = evaluate_batch(X[np.newaxis], labels, U, sigma, weights)
    logits = fwd.logits[0]
    return LossBreakdown(
        ce=float(ce[0]),
        sem=float(reg.sem[0]),
        overlap=float(reg.overlap[0]),
        sparse=summary.sparse,
        total=summary.total,
        logits=logits,
        predicted_class=int(np.argmax(logits)),
    )


# ---------------------------------------------------------------------------
# Batched engine
# ---------------------------------------------------------------------------

def forward_batch(X: np.ndarray, U: np.ndarray, sigma: np.ndarray) -> BatchForward:
    """Projections, max-pooled energies and logits for a batch."""
    A = np.einsum('cdk,bdl->bckl', U, X)
    M = A * A
    argmax = np.argmax(M, axis=-1)
    pooled = np.take_along_axis(M, argmax[..., np.newaxis], axis=-1)[..., 0]
    logits = np.sum(sigma[np.newaxis] * pooled, axis=-1)
    return BatchForward(A=A, M=M, argmax=argmax, pooled=pooled, logits=logits)


def regularizers_batch(M_target: np.ndarray, sigma_target: np.ndarray) -> BatchRegularizers:
    """Spatial entropy and overlap of each sample's target-class maps.

    Parameters
    ----------
    M_target:
        ``(B, K, L)`` unweighted response maps of each sample's ground-truth
        class.
    sigma_target:
        ``(B, K)`` capacities of that class; the active set is ``sigma > 0``
        and is treated as a constant.
    """
    log_p = _log_softmax(M_target)
    P = np.exp(log_p)
    mask = (sigma_target > 0.0).astype(np.float64)
    ranks = mask.sum(axis=1)

    entropy = -np.sum(P * log_p, axis=-1)
    safe_ranks = np.where(ranks > 0, ranks, 1.0)
    sem = np.where(ranks > 0, np.sum(mask * entropy, axis=1) / safe_ranks, 0.0)

    norms = np.linalg.norm(P, axis=-1)
    unit = P / norms[..., np.newaxis]
    cosine = np.einsum('bkl,bjl->bkj', unit, unit)
    pair_mask = mask[:, :, np.newaxis] * mask[:, np.newaxis, :]
    K = M_target.shape[1]
    pair_mask = pair_mask * (1.0 - np.eye(K))[np.newaxis]
    pairs = ranks * (ranks - 1.0)
    safe_pairs = np.where(pairs > 0, pairs, 1.0)
    overlap = np.where(ranks >= 2, np.sum(pair_mask * cosine, axis=(1, 2)) / safe_pairs, 0.0)

    return BatchRegularizers(log_p=log_p, P=P, mask=mask, entropy=entropy, cosine=cosine,
                             norms=norms, sem=sem, overlap=overlap, ranks=ranks)


def check_labels(labels: np.ndarray, C: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"labels must be a 1-D integer array, got {labels.dtype} {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise LabelError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    return labels


def evaluate_batch(X: np.ndarray, labels: np.ndarray, U: np.ndarray, sigma: np.ndarray,
                   weights: LossWeights):
    """Full forward pass for a batch.

    Returns
    -------
    tuple
        ``(BatchForward, BatchRegularizers, per-sample ce, LossSummary)``;
        the summary holds batch means and the weighted total.
    """
    C = U.shape[0]
    labels = check_labels(labels, C)
    fwd = forward_batch(X, U, sigma)
    batch = np.arange(X.shape[0])
    reg = regularizers_batch(fwd.M[batch, labels], sigma[labels])
    ce = -log_softmax(fwd.logits)[batch, labels]
    summary = summarize(ce, reg.sem, reg.overlap, float(np.sum(sigma)), weights)
    return fwd, reg, ce, summary


def summarize(ce: np.ndarray, sem: np.ndarray, overlap: np.ndarray, sparse: float,
              weights: LossWeights) -> LossSummary:
    mean_ce = float(np.mean(ce))
    mean_sem = float(np.mean(sem))
    mean_overlap = float(np.mean(overlap))
    total = mean_ce + weights.gamma1 * mean_sem + weights.gamma2 * mean_overlap + weights.lam * sparse
    return LossSummary(ce=mean_ce, sem=mean_sem, overlap=mean_overlap, sparse=sparse, total=total)

