"""Analytic gradients of the composite loss and a finite-difference oracle.

The backward pass mirrors :func:`amp_prototypes.amp_head.evaluate_batch`:
max-pooling routes its gradient to the recorded argmax location, and the
active set of each class is a constant. Gradients are those of the batch
mean of ``ce + gamma1 * sem + gamma2 * overlap``; the ``lambda`` term is
applied by :func:`amp_prototypes.capacity.prox_step` and never appears here.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .amp_head import (BatchForward, BatchRegularizers, ClassSubspace, LossWeights,
                       evaluate_batch, flatten_features, stack_subspaces)
from .errors import NonFiniteError, ShapeError
from .modules.backbone import BackboneParams, embed_backward_batch, embed_batch

logger = logging.getLogger(__name__)

TERMS = ('ce', 'sem', 'overlap', 'total')
# Denominator floor of the model-level check: coordinates whose analytic and
# numeric gradients are both below it are compared on an absolute scale.
ORACLE_FLOOR = 1e-3


@dataclass
class GradientBundle:
    """Gradients for every parameter group of one loss evaluation.

    Attributes
    ----------
    bases:
        Ambient ``dL/dU``, shape ``(C, D, K)``.
    capacities:
        ``dL/dsigma`` without the sparsity term, shape ``(C, K)``.
    features:
        ``dL/dF``, shape ``(D, H, W)`` for one sample or ``(B, D, H, W)``.
    """

    bases: np.ndarray
    capacities: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        for name in ('bases', 'capacities', 'features'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteError(f"gradient for {name} contains NaN or Inf")


# ---------------------------------------------------------------------------
# Analytic backward pass
# ---------------------------------------------------------------------------

def _sem_grad(reg: BatchRegularizers) -> np.ndarray:
    """d sem / d M for the target maps, shape ``(B, K, L)``."""
    safe = np.where(reg.ranks > 0, reg.ranks, 1.0)
    scale = (reg.mask / safe[:, np.newaxis])[..., np.newaxis]
    return -scale * reg.P * (reg.log_p + reg.entropy[..., np.newaxis])


def _overlap_grad(reg: BatchRegularizers) -> np.ndarray:
    """d overlap / d M for the target maps, shape ``(B, K, L)``."""
    B, K, _ = reg.P.shape
    pairs = reg.ranks * (reg.ranks - 1.0)
    coef = np.where(reg.ranks >= 2, 2.0 / np.where(pairs > 0, pairs, 1.0), 0.0)
    pair_mask = reg.mask[:, :, np.newaxis] * reg.mask[:, np.newaxis, :]
    pair_mask = pair_mask * (1.0 - np.eye(K))[np.newaxis]
    unit = reg.P / reg.norms[..., np.newaxis]
    # sum_j m_k m_j (u_j - cos_kj u_k) / n_k
    toward = np.einsum('bkj,bjl->bkl', pair_mask, unit)
    along = np.sum(pair_mask * reg.cosine, axis=2)[..., np.newaxis] * unit
    grad_p = coef[:, np.newaxis, np.newaxis] * (toward - along) / reg.norms[..., np.newaxis]
    return _softmax_backward(reg.P, grad_p)


def _softmax_backward(P: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    return P * (grad_p - np.sum(P * grad_p, axis=-1, keepdims=True))


def _backward(X: np.ndarray, labels: np.ndarray, U: np.ndarray, sigma: np.ndarray,
              fwd: BatchForward, reg: BatchRegularizers,
              ce_coef: float, sem_coef: float, overlap_coef: float
              ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    B = X.shape[0]
    batch = np.arange(B)

    z = fwd.logits
    q = np.exp(z - np.max(z, axis=1, keepdims=True))
    q /= q.sum(axis=1, keepdims=True)
    q[batch, labels] -= 1.0
    grad_z = ce_coef * q / B

    grad_sigma = np.einsum('bc,bck->ck', grad_z, fwd.pooled)

    grad_m = np.zeros_like(fwd.M)
    routed = (grad_z[:, :, np.newaxis] * sigma[np.newaxis])[..., np.newaxis]
    np.put_along_axis(grad_m, fwd.argmax[..., np.newaxis], routed, axis=-1)

    if sem_coef != 0.0 or overlap_coef != 0.0:
        target = np.zeros_like(reg.P)
        if sem_coef != 0.0:
            target += sem_coef * _sem_grad(reg)
        if overlap_coef != 0.0:
            target += overlap_coef * _overlap_grad(reg)
        grad_m[batch, labels] += target / B

    grad_a = 2.0 * fwd.A * grad_m
    grad_u = np.einsum('bdl,bckl->cdk', X, grad_a)
    grad_x = np.einsum('cdk,bckl->bdl', U, grad_a)
    return grad_u, grad_sigma, grad_x


def backward_batch(X: np.ndarray, labels: np.ndarray, U: np.ndarray, sigma: np.ndarray,
                   weights: LossWeights, terms: Optional[Dict[str, float]] = None):
    """Forward and backward pass for a batch of flattened features.

    Parameters
    ----------
    X:
        ``(B, D, L)`` features.
    labels, U, sigma:
        Targets and stacked class parameters.
    weights:
        Loss weights; ``lam`` is ignored here.
    terms:
        Optional explicit coefficients ``{'ce': a, 'sem': b, 'overlap': c}``
        overriding ``(1, gamma1, gamma2)``.

    Returns
    -------
    tuple
        ``(grad_U, grad_sigma, grad_X, LossSummary, BatchForward)``.
    """
    fwd, reg, _, summary = evaluate_batch(X, labels, U, sigma, weights)
    if terms is None:
        terms = {'ce': 1.0, 'sem': weights.gamma1, 'overlap': weights.gamma2}
    grad_u, grad_sigma, grad_x = _backward(
        X, np.asarray(labels), U, sigma, fwd, reg,
        terms.get('ce', 0.0), terms.get('sem', 0.0), terms.get('overlap', 0.0),
    )
    return grad_u, grad_sigma, grad_x, summary, fwd


def backward_total(F: np.ndarray, label: int, subspaces: Sequence[ClassSubspace],
                   weights: Optional[LossWeights] = None) -> GradientBundle:
    """Gradients of ``ce + gamma1*sem + gamma2*overlap`` for one sample."""
    weights = weights or LossWeights()
    U, sigma = stack_subspaces(subspaces)
    F = np.asarray(F, dtype=np.float64)
    X = flatten_features(F)
    if X.shape[0] != U.shape[1]:
        raise ShapeError(f"feature depth {X.shape[0]} does not match D={U.shape[1]}")
    grad_u, grad_sigma, grad_x, _, _ = backward_batch(X[np.newaxis], np.array([label]),
                                                      U, sigma, weights)
    return GradientBundle(bases=grad_u, capacities=grad_sigma,
                          features=grad_x[0].reshape(F.shape))


def projection_energy_grad(f: np.ndarray, sub: ClassSubspace) -> np.ndarray:
    """Gradient of the weighted projection energy: ``2 U diag(sigma) U^T f``."""
    f = np.asarray(f, dtype=np.float64)
    return 2.0 * sub.basis @ (sub.capacity * (sub.basis.T @ f))


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def numeric_gradient(fn: Callable[[np.ndarray], float], point: np.ndarray,
                     epsilon: float = 1e-6, relative_step: bool = False,
                     skip: Optional[Callable[[np.ndarray, np.ndarray], bool]] = None
                     ) -> np.ndarray:
    """Central-difference gradient of *fn* at *point*.

    *fn* may return a scalar or a 1-D array of ``T`` values; the result then
    has shape ``point.shape`` or ``(T,) + point.shape``. Coordinates for which
    ``skip(x_plus, x_minus)`` is true are reported as NaN.

    Raises
    ------
    NonFiniteError
        If any shifted evaluation is NaN or Inf.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be a positive number, got {epsilon}")
    point = np.array(point, dtype=np.float64)
    flat = point.reshape(-1)
    center = np.asarray(fn(point.copy()), dtype=np.float64)
    result = np.empty((flat.size,) + center.shape)

    for i in range(flat.size):
        step = epsilon * (1.0 + abs(flat[i])) if relative_step else epsilon
        plus = flat.copy()
        plus[i] += step
        minus = flat.copy()
        minus[i] -= step
        x_plus = plus.reshape(point.shape)
        x_minus = minus.reshape(point.shape)
        if skip is not None and skip(x_plus, x_minus):
            result[i] = np.nan
            continue
        f_plus = np.asarray(fn(x_plus), dtype=np.float64)
        f_minus = np.asarray(fn(x_minus), dtype=np.float64)
        if not (np.all(np.isfinite(f_plus)) and np.all(np.isfinite(f_minus))):
            raise NonFiniteError(f"function is not finite near coordinate {i}")
        # actual step after rounding
        h = x_plus.reshape(-1)[i] - x_minus.reshape(-1)[i]
        result[i] = (f_plus - f_minus) / h

    result = np.moveaxis(result, 0, -1) if center.ndim else result
    return result.reshape(center.shape + point.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``max |a - n| / max(|a|, |n|, floor)`` over the non-NaN entries of *numeric*."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ShapeError(f"analytic shape {analytic.shape} does not match numeric {numeric.shape}")
    keep = ~np.isnan(numeric)
    if not np.any(keep):
        return 0.0
    a = analytic[keep]
    n = numeric[keep]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def finite_diff_check(fn: Callable[[np.ndarray], float], point: np.ndarray,
                      analytic: np.ndarray, epsilon: float = 1e-6,
                      relative_step: bool = False,
                      skip: Optional[Callable[[np.ndarray, np.ndarray], bool]] = None,
                      floor: float = 1e-8) -> float:
    """Maximum relative error between *analytic* and central differences of *fn*.

    The relative error uses the denominator ``max(|analytic|, |numeric|, floor)``.
    """
    numeric = numeric_gradient(fn, point, epsilon, relative_step, skip)
    return relative_error(analytic, numeric, floor)


# ---------------------------------------------------------------------------
# Model-level check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckState:
    """A small random problem for gradient checking."""

    raw: np.ndarray          # (B, D_in, H, W)
    labels: np.ndarray       # (B,)
    params: BackboneParams
    bases: np.ndarray        # (C, D, K), unconstrained
    capacities: np.ndarray   # (C, K)
    weights: LossWeights


@dataclass
class GradCheckReport:
    """Max relative error per loss term and parameter group."""

    errors: Dict[str, Dict[str, float]] = field(default_factory=dict)
    skipped: int = 0
    floor: float = ORACLE_FLOOR

    @property
    def max_error(self) -> float:
        values = [e for groups in self.errors.values() for e in groups.values()]
        return max(values) if values else 0.0

    def passed(self, tolerance: float = 1e-5) -> bool:
        return self.max_error <= tolerance


def random_check_state(seed: int, C: int = 4, D: int = 6, K: int = 3, H: int = 3, W: int = 3,
                       D_in: int = 5, batch: int = 2,
                       weights: Optional[LossWeights] = None) -> GradCheckState:
    """Random state with strictly positive capacities and unit-scale features."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(D_in)
    params = BackboneParams(rng.uniform(-bound, bound, size=(D, D_in)),
                            rng.normal(0.0, 0.1, size=D))
    bases = rng.standard_normal((C, D, K)) / np.sqrt(D)
    capacities = rng.uniform(0.5, 1.5, size=(C, K))
    raw = rng.standard_normal((batch, D_in, H, W))
    labels = rng.integers(0, C, size=batch)
    weights = weights or LossWeights(gamma1=0.5, gamma2=0.5, lam=0.0)
    return GradCheckState(raw=raw, labels=labels, params=params, bases=bases,
                          capacities=capacities, weights=weights)


def _term_values(X: np.ndarray, labels: np.ndarray, U: np.ndarray, sigma: np.ndarray,
                 weights: LossWeights) -> np.ndarray:
    summary = evaluate_batch(X, labels, U, sigma, weights)[3]
    smooth = summary.ce + weights.gamma1 * summary.sem + weights.gamma2 * summary.overlap
    return np.array([summary.ce, summary.sem, summary.overlap, smooth])


def _signature(X: np.ndarray, labels: np.ndarray, U: np.ndarray, sigma: np.ndarray):
    fwd, _, _, _ = evaluate_batch(X, labels, U, sigma, LossWeights(0.0, 0.0, 0.0))
    return fwd.argmax, sigma > 0.0


def check_gradients(state: GradCheckState, epsilon: float = 1e-6,
                    floor: float = ORACLE_FLOOR) -> GradCheckReport:
    """Compare analytic gradients with central differences for every term and group.

    Steps are relative, ``epsilon * (1 + |x|)``. Coordinates whose shifted
    evaluations move a pooling argmax or the active set are skipped.

    The relative error uses ``max(|analytic|, |numeric|, floor)``. With the
    default ``ORACLE_FLOOR`` a coordinate whose gradient is below ``1e-3``
    passes a ``1e-5`` tolerance when its absolute error is below ``1e-8``.
    ``floor=1e-8`` gives the strict ratio, which near-zero coordinates miss
    by the ``~1e-10`` absolute round-off of central differences.
    """
    raw, labels, weights = state.raw, np.asarray(state.labels), state.weights
    B, _, H, W = raw.shape

    def features(weight, bias):
        F = embed_batch(raw, BackboneParams(weight, bias))
        return F.reshape(B, F.shape[1], H * W)

    X0 = features(state.params.weight, state.params.bias)
    U0, s0 = state.bases, state.capacities
    base_signature = _signature(X0, labels, U0, s0)

    def same(signature) -> bool:
        return (np.array_equal(signature[0], base_signature[0])
                and np.array_equal(signature[1], base_signature[1]))

    # Each group maps its parameter array to (X, U, sigma).
    groups = {
        'bases': (U0, lambda u: (X0, u, s0)),
        'capacities': (s0, lambda s: (X0, U0, s)),
        'features': (X0, lambda x: (x, U0, s0)),
        'weight': (state.params.weight, lambda w: (features(w, state.params.bias), U0, s0)),
        'bias': (state.params.bias, lambda b: (features(state.params.weight, b), U0, s0)),
    }

    per_term = {'ce': {'ce': 1.0}, 'sem': {'sem': 1.0}, 'overlap': {'overlap': 1.0},
                'total': {'ce': 1.0, 'sem': weights.gamma1, 'overlap': weights.gamma2}}
    analytic = {}
    for term, coefs in per_term.items():
        grad_u, grad_s, grad_x, _, _ = backward_batch(X0, labels, U0, s0, weights, terms=coefs)
        grad_f = grad_x.reshape(B, -1, H, W)
        grad_w, grad_b = embed_backward_batch(grad_f, raw, state.params)
        analytic[term] = {'bases': grad_u, 'capacities': grad_s, 'features': grad_x,
                          'weight': grad_w, 'bias': grad_b}

    report = GradCheckReport(floor=floor)
    for group, (point, unpack) in groups.items():
        def fn(p, unpack=unpack):
            x, u, s = unpack(p)
            return _term_values(x, labels, u, s, weights)

        def skip(p_plus, p_minus, unpack=unpack):
            x, u, s = unpack(p_plus)
            if not same(_signature(x, labels, u, s)):
                return True
            x, u, s = unpack(p_minus)
            return not same(_signature(x, labels, u, s))

        numeric = numeric_gradient(fn, point, epsilon, relative_step=True, skip=skip)
        report.skipped += int(np.count_nonzero(np.isnan(numeric[0])))
        for t, term in enumerate(TERMS):
            report.errors.setdefault(term, {})[group] = relative_error(
                analytic[term][group], numeric[t], floor)
    logger.debug("Gradient check: max error %.3e (%d coordinates skipped)",
                 report.max_error, report.skipped)
    return report
