#!/usr/bin/env python3
"""
Validation script for the scaled-down experiments.

Runs the collapse contrast, rank recovery, lambda sweep, toy classification
and explanation faithfulness checks on synthetic data and prints a PASS/FAIL
summary. Each check trains real models, so a full run takes several minutes.
"""

import dataclasses
import sys
import time

import numpy as np

from amp_prototypes.amp_head import LossWeights
from amp_prototypes.collapse_lab import collapse_demo, gen_synthetic
from amp_prototypes.explainer import build_feature_cache, explain, occlusion_sanity
from amp_prototypes.modules.config_loader import ConfigLoader
from amp_prototypes.trainer import evaluate, fit, initialize_model, run_sweep

SEEDS = [0, 1, 2, 3, 4]


def _defaults():
    loader = ConfigLoader()
    return loader.training_config(), loader.synthetic_spec(), loader.baseline_config()


def _test_set(spec):
    held_out = max(1, round(0.25 * spec.samples_per_class))
    return gen_synthetic(dataclasses.replace(spec, samples_per_class=held_out), sample_seed=1)


def validate_collapse_contrast():
    """Baseline prototypes collapse at low noise while manifold bases keep full rank."""
    print("\n=== Collapse contrast (noise=0.01, R*=1, K=5) ===")
    cfg, spec, baseline_cfg = _defaults()
    passes = 0
    for seed in SEEDS:
        run_spec = dataclasses.replace(spec, noise=0.01, parts=1, seed=seed)
        run_cfg = dataclasses.replace(cfg, K=5, seed=seed)
        final = collapse_demo(run_spec, run_cfg, baseline_cfg).final
        ok = (final['baseline_max_stable_rank'] <= 1.5
              and final['baseline_mean_cosine'] >= 0.95
              and final['amp_residual'] <= 1e-8)
        passes += ok
        print(f"   seed {seed}: baseline max stable rank {final['baseline_max_stable_rank']:.3f}, "
              f"cosine {final['baseline_mean_cosine']:.3f}, "
              f"manifold residual {final['amp_residual']:.2e} -> {'ok' if ok else 'miss'}")
    return passes >= 4


def validate_rank_recovery():
    """Planted R*=3 with K=10 and lambda=0.01 recovers a mean active rank in [3, 4]."""
    print("\n=== Rank recovery (R*=3, K=10, lambda=0.01) ===")
    cfg, spec = ConfigLoader().rank_recovery_setup()
    passes = 0
    for seed in SEEDS:
        run_cfg = dataclasses.replace(cfg, seed=seed)
        data = gen_synthetic(dataclasses.replace(spec, seed=seed))
        model, _ = fit(initialize_model(data, run_cfg), data, run_cfg)
        mean_rank = float(np.mean(model.active_ranks()))
        ok = 3.0 <= mean_rank <= 4.0
        passes += ok
        print(f"   seed {seed}: mean active rank {mean_rank:.2f} "
              f"ranks {model.active_ranks()} -> {'ok' if ok else 'miss'}")
    return passes >= 4


def validate_lambda_sweep():
    """Mean active rank is nonincreasing as lambda grows, and actually drops."""
    print("\n=== Lambda sweep ===")
    cfg, spec = ConfigLoader().rank_recovery_setup()
    train = gen_synthetic(spec)
    rows = run_sweep(train, _test_set(spec), cfg, 'lambda', [1e-5, 1e-3, 1e-1])
    for r in rows:
        print(f"   {r.variant:<16} accuracy {r.accuracy:.3f} mean rank {r.mean_rank:.2f}")
    ranks = [r.mean_rank for r in rows]
    return all(a >= b for a, b in zip(ranks, ranks[1:])) and ranks[0] > ranks[-1]


def validate_classification_and_explanations():
    """Toy accuracy, evidence additivity and occlusion sanity on held-out samples."""
    print("\n=== Toy classification and explanations ===")
    cfg, spec, _ = _defaults()
    train, test = gen_synthetic(spec), _test_set(spec)
    model, _ = fit(initialize_model(train, cfg), train, cfg)
    accuracy = evaluate(model, test, cfg.weights).accuracy
    print(f"   test accuracy {accuracy:.3f}")

    cache = build_feature_cache(model, train)
    worst = max(abs(e.total_evidence - e.logit)
                for e in (explain(raw, model, cache) for raw in test.raw))
    print(f"   largest additivity gap {worst:.2e}")

    occlusion = occlusion_sanity(model, test, seed=0, max_samples=100)
    print(f"   occlusion sanity {occlusion:.3f}")
    return accuracy >= 0.95 and worst <= 1e-9 and occlusion >= 0.8


def ablation_margins(results):
    """``(label, margin, relative)`` for each regularizer against the full model.

    *results* maps ``full``, ``no_sem`` and ``no_overlap`` to loss summaries.
    A positive margin means dropping the regularizer raised its term.
    """
    full = results['full']
    rows = []
    for label, dropped, term in [('sem, no_sem - full', 'no_sem', 'sem'),
                                 ('overlap, no_overlap - full', 'no_overlap', 'overlap')]:
        reference = getattr(full, term)
        margin = getattr(results[dropped], term) - reference
        relative = margin / reference if reference else float('inf')
        rows.append((label, margin, relative))
    return rows


def validate_regularizer_ablation():
    """Dropping a regularizer raises the term it controls."""
    print("\n=== Regularizer ablation ===")
    cfg, spec, _ = _defaults()
    train, test = gen_synthetic(spec), _test_set(spec)
    results = {}
    for name, weights in [('full', cfg.weights),
                          ('no_sem', dataclasses.replace(cfg.weights, gamma1=0.0)),
                          ('no_overlap', dataclasses.replace(cfg.weights, gamma2=0.0))]:
        run_cfg = dataclasses.replace(cfg, weights=weights)
        model, _ = fit(initialize_model(train, run_cfg), train, run_cfg)
        results[name] = evaluate(model, test, LossWeights()).losses
        print(f"   {name:<12} sem {results[name].sem:.6f} overlap {results[name].overlap:.6f}")
    margins = ablation_margins(results)
    for label, margin, relative in margins:
        print(f"   margin {label:<28} {margin:+.3e} ({relative:+.2%} of full)")
    return all(margin > 0.0 for _, margin, _ in margins)


def main():
    """Run every validation and print the summary."""
    print("AMP Prototypes Experiment Validation")
    print("=" * 50)

    checks = [
        ("Collapse contrast", validate_collapse_contrast),
        ("Rank recovery", validate_rank_recovery),
        ("Lambda sweep monotonicity", validate_lambda_sweep),
        ("Toy classification and explanations", validate_classification_and_explanations),
        ("Regularizer ablation", validate_regularizer_ablation),
    ]
    validation_results = []
    for name, check in checks:
        start = time.time()
        result = check()
        print(f"   ({time.time() - start:.1f}s)")
        validation_results.append((name, result))

    print(f"\n{'='*50}")
    print("VALIDATION SUMMARY")
    print(f"{'='*50}")

    passed = sum(1 for _, result in validation_results if result)
    total = len(validation_results)
    for name, result in validation_results:
        status = "✅ PASS" if result else "❌ FAIL"
        print(f"{status} {name}")

    print(f"\nOverall: {passed}/{total} experiments validated")
    return 0 if passed == total else 1


if __name__ == "__main__":
    sys.exit(main())
