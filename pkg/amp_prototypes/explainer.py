"""Additive explanations: per-direction heatmaps, peaks, evidence and nearest patches.

A prediction's logit is the sum of one contribution per active direction of
the predicted class, ``sigma_k * max_hw (U_k^T F_hw)^2``. An
:class:`Explanation` lists those contributions with the weighted heatmap each
one was pooled from and the training patch that excites the same direction
most strongly.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .amp_head import forward_batch
from .checkpoint import encode_checkpoint, fnv1a_64
from .dataset_io import Dataset
from .errors import EmptyClassError, IOFailure, LabelError, NonFiniteError, ShapeError, StaleCacheError
from .model import AMPModel

logger = logging.getLogger(__name__)

EXPLANATION_FILE = 'explanation.json'
FLOAT_FORMAT = '#.17g'


@dataclass(frozen=True)
class PatchReference:
    """Training sample index, grid location and the energy reached there."""

    sample: int
    h: int
    w: int
    energy: float


@dataclass
class PartEvidence:
    direction: int
    capacity: float
    heatmap: np.ndarray = field(repr=False)
    peak: Tuple[int, int]
    contribution: float
    patch: PatchReference


@dataclass
class Explanation:
    """Evidence for one class; ``total_evidence`` equals that class's logit."""

    predicted_class: int
    explained_class: int
    total_evidence: float
    logit: float
    parts: List[PartEvidence] = field(default_factory=list)


@dataclass
class FeatureCache:
    """Training features computed with a frozen backbone.

    ``fingerprint`` is the FNV-1a hash of the model's checkpoint bytes at
    build time.
    """

    fingerprint: int
    features: np.ndarray            # (N, D, H, W)
    labels: np.ndarray
    sample_ids: np.ndarray

    def class_entries(self, c: int) -> np.ndarray:
        """Cache rows holding class *c*, in sample order."""
        return np.flatnonzero(self.labels == c)


def model_fingerprint(model: AMPModel) -> int:
    return fnv1a_64(encode_checkpoint(model))


def build_feature_cache(model: AMPModel, dataset: Dataset, batch_size: int = 256) -> FeatureCache:
    """Embed every training sample with the model's current backbone."""
    dataset.require_samples()
    features = np.empty((len(dataset), model.D) + dataset.grid)
    for idx in dataset.batches(batch_size):
        features[idx] = model.backbone.embed_batch(dataset.raw[idx])
    cache = FeatureCache(fingerprint=model_fingerprint(model), features=features,
                         labels=dataset.labels.copy(), sample_ids=np.arange(len(dataset)))
    logger.debug("Built feature cache with %d samples", len(dataset))
    return cache


def _check_cache(model: AMPModel, cache: FeatureCache) -> None:
    if model_fingerprint(model) != cache.fingerprint:
        raise StaleCacheError("feature cache was built for a different model snapshot")


def nearest_patch(k: int, c: int, model: AMPModel, cache: FeatureCache) -> PatchReference:
    """Cached class-``c`` patch maximizing ``(U_ck^T F_hw)^2``.

    The search is exhaustive; ties go to the lowest (sample, h, w).

    Raises
    ------
    EmptyClassError
        If the cache holds no sample of class *c*.
    """
    rows = cache.class_entries(c)
    if rows.size == 0:
        raise EmptyClassError(f"feature cache has no samples of class {c}")
    u = model.subspaces.bases[c][:, k]
    feats = cache.features[rows]
    energy = np.einsum('d,ndhw->nhw', u, feats) ** 2
    flat = int(np.argmax(energy))
    n, h, w = np.unravel_index(flat, energy.shape)
    return PatchReference(sample=int(cache.sample_ids[rows[n]]), h=int(h), w=int(w),
                          energy=float(energy[n, h, w]))


def explain(raw: np.ndarray, model: AMPModel, cache: FeatureCache,
            class_override: Optional[int] = None) -> Explanation:
    """Explain the prediction for one raw input.

    Only active directions of the explained class appear. By default the
    explained class is the prediction; *class_override* selects another.

    Raises
    ------
    StaleCacheError
        If *cache* was built for different model parameters.
    """
    _check_cache(model, cache)
    F = model.backbone.embed(raw)
    _, H, W = F.shape
    X = F.reshape(F.shape[0], -1)
    fwd = forward_batch(X[np.newaxis], model.subspaces.bases, model.subspaces.capacities)
    logits = fwd.logits[0]
    predicted = int(np.argmax(logits))
    c = predicted if class_override is None else int(class_override)
    if not 0 <= c < model.C:
        raise LabelError(f"class {c} outside [0, {model.C})")

    sigma = model.subspaces.capacities[c]
    parts = []
    for k in model.subspaces.active_set(c).indices:
        heatmap = (sigma[k] * fwd.M[0, c, k]).reshape(H, W)
        l_star = int(fwd.argmax[0, c, k])
        peak = divmod(l_star, W)
        parts.append(PartEvidence(
            direction=k,
            capacity=float(sigma[k]),
            heatmap=heatmap,
            peak=(int(peak[0]), int(peak[1])),
            contribution=float(heatmap[peak]),
            patch=nearest_patch(k, c, model, cache),
        ))
    total = float(sum(p.contribution for p in parts))
    return Explanation(predicted_class=predicted, explained_class=c, total_evidence=total,
                       logit=float(logits[c]), parts=parts)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def heatmap_filename(direction: int) -> str:
    return f"heatmap_k{direction:02d}.pgm"


def heatmap_pixels(values: np.ndarray) -> np.ndarray:
    """Per-map min-max scaling to ``0..255`` with half-up rounding (all 0 if constant)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"heatmap must be H x W, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("heatmap contains NaN or Inf")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8)
    t = (values - lo) / (hi - lo)
    return np.clip(np.floor(255.0 * t + 0.5), 0, 255).astype(np.uint8)


def export_heatmap_pgm(values: np.ndarray, path: Union[str, Path]) -> Path:
    """Write a binary (P5) PGM, row-major from the top-left corner."""
    pixels = heatmap_pixels(values)
    H, W = pixels.shape
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as handle:
            handle.write(f"P5\n{W} {H}\n255\n".encode('ascii'))
            handle.write(pixels.tobytes())
    except OSError as e:
        raise IOFailure(f"cannot write heatmap {path}: {e}")
    return path


def explanation_to_dict(expl: Explanation) -> dict:
    """JSON-ready document with a fixed key order."""
    doc = {'predicted_class': expl.predicted_class}
    if expl.explained_class != expl.predicted_class:
        doc['explained_class'] = expl.explained_class
    doc['total_evidence'] = expl.total_evidence
    doc['parts'] = [
        {
            'direction': p.direction,
            'capacity': p.capacity,
            'peak': [p.peak[0], p.peak[1]],
            'contribution': p.contribution,
            'patch': {'sample': p.patch.sample, 'h': p.patch.h, 'w': p.patch.w},
            'heatmap_file': heatmap_filename(p.direction),
        }
        for p in expl.parts
    ]
    return doc


def _format_float(value: float) -> str:
    if not np.isfinite(value):
        return json.dumps(value)
    return format(value, FLOAT_FORMAT)


def dumps_document(value, indent: int = 2, level: int = 0) -> str:
    """Serialize like ``json.dumps(value, indent=indent)`` with fixed-width floats.

    Every float is written with ``FLOAT_FORMAT`` (17 significant digits,
    trailing zeros kept), which reproduces the double exactly.
    """
    pad = ' ' * (indent * (level + 1))
    close = ' ' * (indent * level)
    if isinstance(value, dict):
        if not value:
            return '{}'
        items = [f"{pad}{json.dumps(str(k))}: {dumps_document(v, indent, level + 1)}"
                 for k, v in value.items()]
        return '{\n' + ',\n'.join(items) + '\n' + close + '}'
    if isinstance(value, (list, tuple)):
        if not value:
            return '[]'
        items = [pad + dumps_document(v, indent, level + 1) for v in value]
        return '[\n' + ',\n'.join(items) + '\n' + close + ']'
    if value is None or isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (bool, np.bool_)):
        return json.dumps(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _format_float(float(value))
    raise TypeError(f"cannot serialize {type(value).__name__}")


def export_explanation_json(expl: Explanation, path: Union[str, Path]) -> Path:
    """Write the explanation document with 17 significant digits per float."""
    path = Path(path)
    text = dumps_document(explanation_to_dict(expl)) + "\n"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding='utf-8')
    except OSError as e:
        raise IOFailure(f"cannot write explanation {path}: {e}")
    return path


def export_explanation(expl: Explanation, out_dir: Union[str, Path]) -> List[Path]:
    """Write one PGM per part and ``explanation.json`` into *out_dir*."""
    out_dir = Path(out_dir)
    written = [export_heatmap_pgm(p.heatmap, out_dir / heatmap_filename(p.direction))
               for p in expl.parts]
    written.append(export_explanation_json(expl, out_dir / EXPLANATION_FILE))
    logger.info("Exported explanation with %d parts to %s", len(expl.parts), out_dir)
    return written


# ---------------------------------------------------------------------------
# Occlusion sanity
# ---------------------------------------------------------------------------

def _class_logit(model: AMPModel, raw: np.ndarray, c: int) -> float:
    F = model.backbone.embed(raw)
    X = F.reshape(F.shape[0], -1)
    return float(forward_batch(X[np.newaxis], model.subspaces.bases,
                               model.subspaces.capacities).logits[0, c])


def occlusion_sanity(model: AMPModel, dataset: Dataset, seed: int = 0,
                     max_samples: int = 100) -> float:
    """Fraction of samples where occluding the top peak hurts at least as much as a random spot.

    For each sample the raw input is zeroed at a single grid location: once at
    the peak of the top-contributing direction of the predicted class, once
    at a uniformly random location. The sample passes when the first drop in
    the predicted logit is at least the second.
    """
    dataset.require_samples()
    cache = build_feature_cache(model, dataset)
    rng = np.random.default_rng(seed)
    H, W = dataset.grid
    n = min(max_samples, len(dataset))
    passed = 0
    for i in range(n):
        raw = dataset.raw[i]
        expl = explain(raw, model, cache)
        c = expl.predicted_class
        base = expl.logit
        loc = int(rng.integers(H * W))
        if not expl.parts:
            continue
        top = max(expl.parts, key=lambda p: (p.contribution, -p.direction))
        occluded = raw.copy()
        occluded[:, top.peak[0], top.peak[1]] = 0.0
        drop_peak = base - _class_logit(model, occluded, c)
        occluded = raw.copy()
        occluded[:, loc // W, loc % W] = 0.0
        drop_random = base - _class_logit(model, occluded, c)
        if drop_peak >= drop_random:
            passed += 1
    return passed / n
