#!/usr/bin/env python3
"""
Tests for the helpers of the experiment validation script.
"""

import math

import pytest

from amp_prototypes.amp_head import LossSummary
from validate_experiments import ablation_margins


class TestAblationMargins:
    def test_margins_and_relative_change(self):
        results = {'full': LossSummary(sem=2.0, overlap=0.5),
                   'no_sem': LossSummary(sem=2.5, overlap=0.1),
                   'no_overlap': LossSummary(sem=1.0, overlap=0.4)}
        (sem_label, sem, sem_rel), (ov_label, ov, ov_rel) = ablation_margins(results)
        assert sem_label.startswith('sem') and ov_label.startswith('overlap')
        assert sem == pytest.approx(0.5) and sem_rel == pytest.approx(0.25)
        assert ov == pytest.approx(-0.1) and ov_rel == pytest.approx(-0.2)

    def test_zero_reference_gives_infinite_relative_change(self):
        results = {'full': LossSummary(sem=0.0, overlap=0.0),
                   'no_sem': LossSummary(sem=1e-4),
                   'no_overlap': LossSummary(overlap=0.0)}
        margins = ablation_margins(results)
        assert margins[0][1] == pytest.approx(1e-4)
        assert all(math.isinf(relative) for _, _, relative in margins)
