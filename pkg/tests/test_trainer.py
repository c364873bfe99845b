#!/usr/bin/env python3
"""
Unit tests for the decoupled training loop, evaluation and experiment harnesses.
"""

import dataclasses
import math

import numpy as np
import pytest

from amp_prototypes.amp_head import class_logits
from amp_prototypes.dataset_io import Dataset
from amp_prototypes.errors import ConfigError, EmptyDatasetError, NonFiniteError, ShapeError, StepError
from amp_prototypes.schedule import cosine_lr, total_steps
from amp_prototypes.trainer import (evaluate, fit, initialize_model, rank_histogram,
                                    run_ablation, run_sweep, train_epoch)


# ---------------------------------------------------------------------------
# cosine_lr
# ---------------------------------------------------------------------------

class TestCosineLR:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 0.001, 0.00001) == 0.001
        assert cosine_lr(100, 100, 0.001, 0.00001) == pytest.approx(0.00001, rel=1e-12)
        assert cosine_lr(50, 100, 0.001, 0.00001) == pytest.approx(0.000505, rel=1e-12)

    def test_monotone(self):
        values = [cosine_lr(t, 40, 0.01, 0.001) for t in range(41)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("t,T", [(-1, 10), (11, 10), (0, 0)])
    def test_bad_step(self, t, T):
        with pytest.raises(StepError):
            cosine_lr(t, T, 0.01, 0.001)

    def test_total_steps(self, small_cfg):
        assert total_steps(12, small_cfg) == 2 * 3
        assert total_steps(13, small_cfg) == 2 * 4


# ---------------------------------------------------------------------------
# train_epoch
# ---------------------------------------------------------------------------

class TestTrainEpoch:
    def test_zero_learning_rate_changes_nothing(self, small_model, small_data, small_cfg):
        updated, report = train_epoch(small_model, small_data, small_cfg, lr_fn=lambda step: 0.0)
        assert updated.equals(small_model)
        assert report.accuracy == evaluate(small_model, small_data, small_cfg.weights).accuracy

    def test_epoch_bookkeeping(self, small_model, small_data, small_cfg):
        updated, report = train_epoch(small_model, small_data, small_cfg)
        assert updated.epoch == 1 and report.epoch == 0
        assert updated.step == math.ceil(len(small_data) / small_cfg.batch_size)
        assert report.residual <= 1e-8
        assert np.all(updated.subspaces.capacities >= 0.0)
        assert 0.0 <= report.accuracy <= 1.0
        assert report.lr > 0
        assert not updated.equals(small_model)

    def test_input_model_untouched(self, small_model, small_data, small_cfg):
        snapshot = small_model.copy()
        train_epoch(small_model, small_data, small_cfg)
        assert small_model.equals(snapshot)
        assert small_model.epoch == 0

    def test_deterministic(self, small_model, small_data, small_cfg):
        a, ra = train_epoch(small_model, small_data, small_cfg)
        b, rb = train_epoch(small_model, small_data, small_cfg)
        assert a.equals(b)
        assert ra.as_dict() == rb.as_dict()

    def test_numeric_failure_rolls_back(self, small_model, small_data, small_cfg):
        snapshot = small_model.copy()
        with pytest.raises(NonFiniteError):
            train_epoch(small_model, small_data, small_cfg, lr_fn=lambda step: float('inf'))
        assert small_model.equals(snapshot)

    def test_frozen_capacity(self, small_model, small_data, small_cfg):
        cfg = dataclasses.replace(small_cfg, freeze_capacity=True)
        updated, _ = train_epoch(small_model, small_data, cfg)
        np.testing.assert_array_equal(updated.subspaces.capacities, 1.0)

    def test_dimension_mismatch(self, small_data, small_cfg):
        from amp_prototypes.model import AMPModel
        model = AMPModel.initialize(C=3, D=6, D_in=5, K=3)
        with pytest.raises(ShapeError):
            train_epoch(model, small_data, small_cfg)

    def test_cross_entropy_descends_on_one_sample(self):
        from amp_prototypes.collapse_lab import gen_synthetic
        from amp_prototypes.modules.config_loader import SyntheticSpec, TrainingConfig
        single = gen_synthetic(SyntheticSpec()).subset([0])
        cfg = TrainingConfig(epochs=50)
        _, reports = fit(initialize_model(single, cfg), single, cfg)
        ce = [r.losses.ce for r in reports]
        assert len(ce) == 50
        assert sum(b < a for a, b in zip(ce, ce[1:])) >= 45
        assert ce[-1] < ce[0]


# ---------------------------------------------------------------------------
# evaluate / fit / telemetry
# ---------------------------------------------------------------------------

class TestEvaluate:
    def test_matches_class_logits_replay(self, small_model, small_data, small_cfg):
        model, _ = train_epoch(small_model, small_data, small_cfg)
        result = evaluate(model, small_data, small_cfg.weights)
        subs = model.class_subspaces()
        replay = [int(np.argmax(class_logits(model.backbone.embed(x), subs)))
                  for x in small_data.raw]
        np.testing.assert_array_equal(result.predictions, replay)
        assert result.accuracy == np.mean(np.array(replay) == small_data.labels)

    def test_does_not_mutate(self, small_model, small_data):
        snapshot = small_model.copy()
        evaluate(small_model, small_data)
        assert small_model.equals(snapshot)

    def test_empty_dataset(self, small_model):
        empty = Dataset(np.zeros((0, 6, 3, 3)), np.zeros(0, dtype=int), 3)
        with pytest.raises(EmptyDatasetError):
            evaluate(small_model, empty)


class TestFit:
    def test_checkpoints_written(self, small_model, small_data, small_cfg, tmp_path):
        cfg = dataclasses.replace(small_cfg, checkpoint_every=1)
        model, reports = fit(small_model, small_data, cfg, checkpoint_dir=tmp_path)
        assert len(reports) == 2 and model.epoch == 2
        assert sorted(p.name for p in tmp_path.iterdir()) == ['epoch-0001.ampc', 'epoch-0002.ampc']

    def test_reports_deterministic(self, small_model, small_data, small_cfg):
        _, first = fit(small_model, small_data, small_cfg)
        _, second = fit(small_model, small_data, small_cfg)
        assert [r.as_dict() for r in first] == [r.as_dict() for r in second]

    def test_rank_histogram(self):
        assert rank_histogram([3, 3, 1, 0], 3) == [1, 1, 0, 2]
        with pytest.raises(ValueError):
            rank_histogram([4], 3)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

class TestExperiments:
    def test_ablation_rows(self, small_data, small_cfg):
        cfg = dataclasses.replace(small_cfg, epochs=1)
        rows = run_ablation(small_data, small_data, cfg)
        assert [r.variant for r in rows] == ['full', 'no_stiefel', 'no_capacity', 'lambda0',
                                             'no_sem', 'no_overlap']
        assert rows[1].mean_rank is None
        for r in rows:
            assert 0.0 <= r.accuracy <= 1.0
        no_capacity = rows[2]
        assert no_capacity.mean_rank == cfg.K

    def test_sweep_rows(self, small_data, small_cfg):
        cfg = dataclasses.replace(small_cfg, epochs=1)
        rows = run_sweep(small_data, small_data, cfg, 'lambda', [1e-5, 1e-1])
        assert [r.variant for r in rows] == ['lambda=1e-05', 'lambda=0.1']

    def test_sweep_over_k(self, small_data, small_cfg):
        cfg = dataclasses.replace(small_cfg, epochs=1)
        rows = run_sweep(small_data, small_data, cfg, 'k', [1, 2])
        assert [r.mean_rank for r in rows] == [1.0, 2.0]

    def test_sweep_rejects_unknown_param(self, small_data, small_cfg):
        with pytest.raises(ConfigError):
            run_sweep(small_data, small_data, small_cfg, 'momentum', [0.9])

    def test_sweep_rejects_fractional_k(self, small_data, small_cfg):
        with pytest.raises(ConfigError):
            run_sweep(small_data, small_data, small_cfg, 'k', [1.5])

    @pytest.mark.parametrize("param,value", [('lambda', -0.1), ('gamma1', -1.0),
                                             ('gamma2', float('nan')), ('k', 0),
                                             ('k', float('nan'))])
    def test_sweep_rejects_invalid_values_before_training(self, small_data, small_cfg, param, value):
        with pytest.raises(ConfigError):
            run_sweep(small_data, small_data, small_cfg, param,
                      [2 if param == 'k' else 0.01, value])


# ---------------------------------------------------------------------------
# Rank recovery on planted parts
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def rank_setup():
    from amp_prototypes.modules.config_loader import ConfigLoader
    return ConfigLoader().rank_recovery_setup()


@pytest.mark.slow
class TestRankRecovery:
    def test_mean_active_rank_lands_near_planted_rank(self, rank_setup):
        from amp_prototypes.collapse_lab import gen_synthetic
        cfg, spec = rank_setup
        means = []
        for seed in range(3):
            data = gen_synthetic(dataclasses.replace(spec, seed=seed))
            run_cfg = dataclasses.replace(cfg, seed=seed)
            model, _ = fit(initialize_model(data, run_cfg), data, run_cfg)
            means.append(float(np.mean(model.active_ranks())))
        assert 3.0 <= np.mean(means) <= 4.0
        assert all(m < cfg.K for m in means)

    def test_rank_is_nonincreasing_in_lambda(self, rank_setup):
        from amp_prototypes.collapse_lab import gen_synthetic
        cfg, spec = rank_setup
        train = gen_synthetic(spec)
        test = gen_synthetic(dataclasses.replace(spec, samples_per_class=10), sample_seed=1)
        rows = run_sweep(train, test, cfg, 'lambda', [1e-5, 1e-3, 1e-1])
        ranks = [r.mean_rank for r in rows]
        assert all(a >= b for a, b in zip(ranks, ranks[1:]))
        assert ranks[0] > ranks[-1]
