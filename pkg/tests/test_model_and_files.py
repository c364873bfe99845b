#!/usr/bin/env python3
"""
Tests for the composed model, AMPC checkpoints and AMPD datasets.
"""

import numpy as np
import pytest

from amp_prototypes.checkpoint import (decode_checkpoint, encode_checkpoint, fnv1a_64,
                                       load_checkpoint, save_checkpoint,
                                       validate_checkpoint_file)
from amp_prototypes.collapse_lab import gen_synthetic
from amp_prototypes.dataset_io import (Dataset, decode_dataset, load_dataset, save_dataset,
                                       split_by_class)
from amp_prototypes.errors import (CorruptCheckpointError, CorruptDatasetError,
                                   EmptyClassError, EmptyDatasetError, InvariantViolation,
                                   LabelError, ShapeError)
from amp_prototypes.model import AMPModel
from amp_prototypes.stiefel import random_stiefel


@pytest.fixture
def model():
    m = AMPModel.initialize(C=3, D=5, D_in=4, K=2, seed=7)
    m.subspaces.capacities[1, 0] = 0.0
    return m


# ---------------------------------------------------------------------------
# AMPModel
# ---------------------------------------------------------------------------

class TestAMPModel:
    def test_initialize(self, model):
        assert model.dims() == {'C': 3, 'D': 5, 'D_in': 4, 'K': 2}
        assert model.orthonormality_residual() <= 1e-12
        np.testing.assert_array_equal(model.subspaces.bases[2], random_stiefel(5, 2, 9))
        assert model.validate() == []
        assert (model.step, model.epoch) == (0, 0)

    def test_unit_capacities(self):
        m = AMPModel.initialize(C=2, D=4, D_in=3, K=3)
        np.testing.assert_array_equal(m.subspaces.capacities, 1.0)
        assert m.active_ranks() == [3, 3]

    def test_active_ranks(self, model):
        assert model.active_ranks() == [2, 1, 2]
        assert model.subspaces.active_set(1).indices == (1,)

    def test_copy_is_deep(self, model):
        clone = model.copy()
        assert clone.equals(model)
        clone.subspaces.bases[0, 0, 0] += 1.0
        assert not clone.equals(model)
        assert not model.equals(None)

    def test_validate_catches_drift_and_negative_capacity(self, model):
        model.subspaces.bases[0, 0, 0] += 1e-3
        model.subspaces.capacities[2, 1] = -0.5
        issues = model.validate()
        assert any("off the manifold" in i for i in issues)
        assert any("negative capacity" in i for i in issues)

    def test_summary(self, model):
        summary = model.get_summary()
        assert summary['active_ranks'] == [2, 1, 2]
        assert summary['mean_active_rank'] == pytest.approx(5 / 3)

    def test_unknown_module(self, model):
        with pytest.raises(KeyError):
            model.get_module('head')

    def test_class_subspaces_are_copies(self, model):
        subs = model.class_subspaces()
        subs[0].basis[0, 0] = 42.0
        assert model.subspaces.bases[0, 0, 0] != 42.0

    def test_subspace_step_keeps_invariants(self, model):
        rng = np.random.default_rng(0)
        model.subspaces.step(rng.standard_normal((3, 5, 2)), rng.standard_normal((3, 2)),
                             lr=0.05, lam=0.1)
        assert model.orthonormality_residual() <= 1e-12
        assert np.all(model.subspaces.capacities >= 0.0)

    def test_capacity_step_uses_its_own_rate(self, model):
        before = model.subspaces.bases.copy()
        model.subspaces.step(np.zeros((3, 5, 2)), np.zeros((3, 2)), lr=0.01, lam=1.0,
                             capacity_lr=0.05)
        np.testing.assert_allclose(model.subspaces.capacities[0], [0.95, 0.95])
        np.testing.assert_allclose(model.subspaces.bases, before, atol=1e-12)
        model.subspaces.step(np.zeros((3, 5, 2)), np.zeros((3, 2)), lr=0.01, lam=1.0)
        np.testing.assert_allclose(model.subspaces.capacities[0], [0.94, 0.94])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

class TestCheckpoint:
    def test_fnv_reference_values(self):
        assert fnv1a_64(b"") == 0xcbf29ce484222325
        assert fnv1a_64(b"a") == 0xaf63dc4c8601ec8c

    def test_round_trip_is_bit_exact(self, model, tmp_path):
        model.step, model.epoch = 12, 3
        path = save_checkpoint(model, tmp_path / "m.ampc")
        loaded = load_checkpoint(path)
        assert loaded.equals(model)
        assert (loaded.step, loaded.epoch) == (0, 0)
        assert encode_checkpoint(loaded) == path.read_bytes()

    def test_layout(self, model):
        payload = encode_checkpoint(model)
        assert payload[:4] == b"AMPC"
        assert len(payload) == 24 + 8 * (5 * 4 + 5 + 3 * (5 * 2 + 2)) + 8
        # first basis value follows the backbone, column-major
        offset = 24 + 8 * (5 * 4 + 5)
        first = np.frombuffer(payload[offset:offset + 16], dtype='<f8')
        np.testing.assert_array_equal(first, model.subspaces.bases[0][:2, 0])

    def test_truncated(self, model):
        payload = encode_checkpoint(model)
        with pytest.raises(CorruptCheckpointError):
            decode_checkpoint(payload[:-9])
        with pytest.raises(CorruptCheckpointError):
            decode_checkpoint(payload[:10])

    def test_bad_magic(self, model):
        payload = bytearray(encode_checkpoint(model))
        payload[:4] = b"XXXX"
        with pytest.raises(CorruptCheckpointError):
            decode_checkpoint(bytes(payload))

    def test_checksum_mismatch(self, model):
        payload = bytearray(encode_checkpoint(model))
        payload[40] ^= 0x01
        with pytest.raises(CorruptCheckpointError, match="checksum"):
            decode_checkpoint(bytes(payload))

    def test_perturbed_basis_violates_invariant(self, model):
        model.subspaces.bases[0, 0, 0] += 1e-3
        with pytest.raises(InvariantViolation):
            decode_checkpoint(encode_checkpoint(model))

    def test_negative_capacity_violates_invariant(self, model):
        model.subspaces.capacities[0, 0] = -1.0
        with pytest.raises(InvariantViolation):
            decode_checkpoint(encode_checkpoint(model))

    def test_validate_checkpoint_file(self, model, tmp_path):
        path = save_checkpoint(model, tmp_path / "ok.ampc")
        assert validate_checkpoint_file(path) == (True, "")
        ok, message = validate_checkpoint_file(tmp_path / "missing.ampc")
        assert not ok and "not found" in message
        bad = tmp_path / "bad.ampc"
        bad.write_bytes(b"AMPC")
        ok, message = validate_checkpoint_file(bad)
        assert not ok and message


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

class TestDataset:
    def test_round_trip(self, small_data, tmp_path):
        path = save_dataset(small_data, tmp_path / "d.ampd")
        loaded = load_dataset(path)
        np.testing.assert_array_equal(loaded.raw, small_data.raw)
        np.testing.assert_array_equal(loaded.labels, small_data.labels)
        assert loaded.num_classes == small_data.num_classes

    def test_header(self, small_data, tmp_path):
        payload = save_dataset(small_data, tmp_path / "d.ampd").read_bytes()
        assert payload[:4] == b"AMPD"
        header = np.frombuffer(payload[4:28], dtype='<u4')
        np.testing.assert_array_equal(header, [1, 12, 3, 6, 3, 3])
        assert len(payload) == 28 + 4 * 12 + 4 * 12 * 6 * 9

    def test_labels_are_stored_zero_based(self, small_data, tmp_path):
        payload = save_dataset(small_data, tmp_path / "d.ampd").read_bytes()
        stored = np.frombuffer(payload[28:28 + 4 * 12], dtype='<u4')
        np.testing.assert_array_equal(stored, small_data.labels)
        assert stored.min() == 0
        assert stored.max() == small_data.num_classes - 1

    def test_length_must_match_exactly(self, small_data, tmp_path):
        payload = save_dataset(small_data, tmp_path / "d.ampd").read_bytes()
        with pytest.raises(CorruptDatasetError):
            decode_dataset(payload + b"\x00")
        with pytest.raises(CorruptDatasetError):
            decode_dataset(payload[:-1])
        with pytest.raises(CorruptDatasetError):
            decode_dataset(b"AMP")

    def test_bad_magic(self, small_data, tmp_path):
        payload = bytearray(save_dataset(small_data, tmp_path / "d.ampd").read_bytes())
        payload[:4] = b"ABCD"
        with pytest.raises(CorruptDatasetError):
            decode_dataset(bytes(payload))

    def test_label_range(self):
        with pytest.raises(LabelError):
            Dataset(np.zeros((2, 1, 1, 1)), np.array([0, 2]), 2)

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros((2, 1, 1)), np.array([0, 1]), 2)
        with pytest.raises(ShapeError):
            Dataset(np.zeros((2, 1, 1, 1)), np.array([0]), 2)

    def test_empty_checks(self):
        empty = Dataset(np.zeros((0, 2, 1, 1)), np.zeros(0, dtype=int), 2)
        with pytest.raises(EmptyDatasetError):
            empty.require_samples()
        with pytest.raises(EmptyClassError):
            empty.require_class(0)

    def test_batches_and_split(self, small_data):
        batches = list(small_data.batches(5))
        assert [len(b) for b in batches] == [5, 5, 2]
        groups = split_by_class(small_data)
        assert [len(g) for g in groups] == [4, 4, 4]
        sub = small_data.subset(groups[1])
        np.testing.assert_array_equal(sub.labels, 1)

    def test_synthetic_is_float32_exact(self, small_spec):
        data = gen_synthetic(small_spec)
        np.testing.assert_array_equal(data.raw.astype(np.float32).astype(np.float64), data.raw)
