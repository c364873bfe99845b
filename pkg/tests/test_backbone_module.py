#!/usr/bin/env python3
"""
Unit tests for the per-location linear backbone and its module wrapper.
"""

import numpy as np
import pytest

from amp_prototypes.errors import NonFiniteError, ShapeError
from amp_prototypes.grad_engine import finite_diff_check
from amp_prototypes.model import AMPModel
from amp_prototypes.modules.backbone import (BackboneParams, embed, embed_backward,
                                             embed_backward_batch, embed_batch, init_backbone)


@pytest.fixture
def params():
    rng = np.random.default_rng(0)
    return BackboneParams(rng.standard_normal((4, 3)), rng.standard_normal(4))


# ---------------------------------------------------------------------------
# embed
# ---------------------------------------------------------------------------

class TestEmbed:
    def test_identity(self):
        raw = np.random.default_rng(1).standard_normal((3, 2, 2))
        out = embed(raw, BackboneParams(np.eye(3), np.zeros(3)))
        np.testing.assert_array_equal(out, raw)

    def test_zero_input_gives_bias(self, params):
        out = embed(np.zeros((3, 2, 5)), params)
        for h in range(2):
            for w in range(5):
                np.testing.assert_array_equal(out[:, h, w], params.bias)

    def test_per_location_product(self, params):
        raw = np.random.default_rng(2).standard_normal((3, 3, 2))
        out = embed(raw, params)
        for h in range(3):
            for w in range(2):
                np.testing.assert_allclose(out[:, h, w], params.weight @ raw[:, h, w]
                                           + params.bias, rtol=1e-12)

    def test_linear_without_bias(self):
        rng = np.random.default_rng(3)
        p = BackboneParams(rng.standard_normal((4, 3)), np.zeros(4))
        x, y = rng.standard_normal((2, 3, 2, 2))
        np.testing.assert_allclose(embed(2.5 * x - 0.5 * y, p),
                                   2.5 * embed(x, p) - 0.5 * embed(y, p), atol=1e-12)

    def test_batch_matches_single(self, params):
        raw = np.random.default_rng(4).standard_normal((3, 3, 2, 2))
        batched = embed_batch(raw, params)
        for b in range(3):
            np.testing.assert_allclose(batched[b], embed(raw[b], params), rtol=1e-12)

    def test_channel_mismatch(self, params):
        with pytest.raises(ShapeError):
            embed(np.zeros((5, 2, 2)), params)

    def test_non_finite_input(self, params):
        raw = np.zeros((3, 1, 1))
        raw[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            embed(raw, params)


# ---------------------------------------------------------------------------
# embed_backward
# ---------------------------------------------------------------------------

class TestEmbedBackward:
    def test_zero_upstream(self, params):
        grads = embed_backward(np.zeros((4, 2, 2)), np.ones((3, 2, 2)), params)
        for g in grads:
            np.testing.assert_array_equal(g, 0.0)

    def test_single_location_outer_product(self, params):
        rng = np.random.default_rng(5)
        raw = rng.standard_normal((3, 2, 3))
        upstream = np.zeros((4, 2, 3))
        upstream[:, 1, 2] = rng.standard_normal(4)
        grad_w, grad_b, _ = embed_backward(upstream, raw, params)
        np.testing.assert_allclose(grad_w, np.outer(upstream[:, 1, 2], raw[:, 1, 2]))
        np.testing.assert_allclose(grad_b, upstream[:, 1, 2])

    def test_finite_differences(self, params):
        rng = np.random.default_rng(6)
        raw = rng.standard_normal((3, 2, 2))
        upstream = rng.standard_normal((4, 2, 2))
        grad_w, grad_b, grad_raw = embed_backward(upstream, raw, params)

        def loss(weight=params.weight, bias=params.bias, x=raw):
            return float(np.sum(upstream * embed(x, BackboneParams(weight, bias))))

        assert finite_diff_check(lambda w: loss(weight=w), params.weight, grad_w) <= 1e-5
        assert finite_diff_check(lambda b: loss(bias=b), params.bias, grad_b) <= 1e-5
        assert finite_diff_check(lambda x: loss(x=x), raw, grad_raw) <= 1e-5

    def test_batch_sums_samples(self, params):
        rng = np.random.default_rng(7)
        raw = rng.standard_normal((2, 3, 2, 2))
        upstream = rng.standard_normal((2, 4, 2, 2))
        grad_w, grad_b = embed_backward_batch(upstream, raw, params)
        singles = [embed_backward(upstream[b], raw[b], params) for b in range(2)]
        np.testing.assert_allclose(grad_w, singles[0][0] + singles[1][0], rtol=1e-12)
        np.testing.assert_allclose(grad_b, singles[0][1] + singles[1][1], rtol=1e-12)

    def test_upstream_shape(self, params):
        with pytest.raises(ShapeError):
            embed_backward(np.zeros((4, 1, 1)), np.zeros((3, 2, 2)), params)


# ---------------------------------------------------------------------------
# Initialization and module wrapper
# ---------------------------------------------------------------------------

class TestBackboneModule:
    def test_init_bounds(self):
        p = init_backbone(16, 9, seed=0)
        assert p.weight.shape == (16, 9)
        assert np.all(np.abs(p.weight) <= 1.0 / 3.0)
        np.testing.assert_array_equal(p.bias, 0.0)

    def test_init_deterministic(self):
        np.testing.assert_array_equal(init_backbone(5, 4, 3).weight, init_backbone(5, 4, 3).weight)

    def test_params_shape_check(self):
        with pytest.raises(ShapeError):
            BackboneParams(np.zeros((3, 2)), np.zeros(2))

    def test_sgd_step(self):
        model = AMPModel.initialize(C=2, D=4, D_in=3, K=2, seed=0)
        before = model.backbone.params.copy()
        gw = np.ones((4, 3))
        gb = np.ones(4)
        model.backbone.sgd_step(gw, gb, 0.5)
        np.testing.assert_allclose(model.backbone.params.weight, before.weight - 0.5)
        np.testing.assert_allclose(model.backbone.params.bias, before.bias - 0.5)

    def test_sgd_step_rejects_bad_gradient(self):
        model = AMPModel.initialize(C=2, D=4, D_in=3, K=2, seed=0)
        with pytest.raises(ShapeError):
            model.backbone.sgd_step(np.ones((3, 4)), np.ones(4), 0.1)
        with pytest.raises(ValueError):
            model.backbone.sgd_step(np.ones((4, 3)), np.ones(4), 0.0)

    def test_validate_reports_nan(self):
        model = AMPModel.initialize(C=2, D=4, D_in=3, K=2, seed=0)
        model.backbone.params.weight[0, 0] = np.nan
        assert any("NaN" in issue for issue in model.backbone.validate())
