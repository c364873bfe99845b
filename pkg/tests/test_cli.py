#!/usr/bin/env python3
"""
End-to-end tests of the amp-prototypes command line.
"""

import json

import pytest

from amp_prototypes.cli import RUN_CONFIG_FILE, run
from amp_prototypes.explainer import EXPLANATION_FILE


@pytest.fixture
def workdir(tmp_path, small_config_file):
    """Output directory holding a small generated dataset."""
    out = tmp_path / "run"
    assert run(['gen-data', '--config', str(small_config_file), '--out', str(out)]) == 0
    return out


def _common(small_config_file, out):
    return ['--config', str(small_config_file), '--out', str(out)]


# ---------------------------------------------------------------------------
# Usage
# ---------------------------------------------------------------------------

class TestUsage:
    def test_missing_command(self, capsys):
        assert run([]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command(self):
        assert run(['bogus']) == 1

    def test_unknown_flag(self, tmp_path):
        assert run(['train', '--out', str(tmp_path), '--momentum', '0.9']) == 1

    def test_version(self, capsys):
        assert run(['--version']) == 0
        assert "amp-prototypes" in capsys.readouterr().out

    def test_missing_config_file(self, tmp_path):
        assert run(['train', '--config', str(tmp_path / "missing.toml"),
                    '--out', str(tmp_path)]) == 2

    def test_invalid_config_value(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[training]\nepochs = -1\n", encoding="utf-8")
        assert run(['train', '--config', str(path), '--out', str(tmp_path / "o")]) == 1


# ---------------------------------------------------------------------------
# Data, training, evaluation, explanation
# ---------------------------------------------------------------------------

class TestPipeline:
    def test_gen_data(self, workdir):
        assert (workdir / "data.ampd").read_bytes()[:4] == b"AMPD"
        assert (workdir / RUN_CONFIG_FILE).is_file()

    def test_gen_data_flags(self, tmp_path, small_config_file):
        out = tmp_path / "g"
        assert run(['gen-data', *_common(small_config_file, out), '--classes', '2',
                    '--samples-per-class', '5', '--data', str(out / "d.ampd")]) == 0
        header = (out / "d.ampd").read_bytes()[4:12]
        assert int.from_bytes(header[4:8], 'little') == 10
        assert "classes = 2" in (out / RUN_CONFIG_FILE).read_text(encoding="utf-8")

    def test_gen_data_visible_parts(self, tmp_path, small_config_file):
        out = tmp_path / "v"
        assert run(['gen-data', *_common(small_config_file, out), '--visible-parts', '1']) == 0
        assert "visible_parts = 1" in (out / RUN_CONFIG_FILE).read_text(encoding="utf-8")
        assert run(['gen-data', *_common(small_config_file, out), '--visible-parts', '3']) == 1

    def test_capacity_lr_scale_flag(self, workdir, small_config_file):
        common = _common(small_config_file, workdir)
        assert run(['train', *common, '--capacity-lr-scale', '0']) == 1
        assert run(['train', *common, '--capacity-lr-scale', '4']) == 0
        assert "capacity_lr_scale = 4.0" in (workdir / RUN_CONFIG_FILE).read_text(encoding="utf-8")

    def test_invalid_spec_flag(self, tmp_path, small_config_file):
        assert run(['gen-data', *_common(small_config_file, tmp_path), '--parts', '99']) == 1

    def test_train_eval_explain(self, workdir, small_config_file, capsys):
        common = _common(small_config_file, workdir)
        assert run(['train', *common]) == 0
        assert (workdir / "model.ampc").read_bytes()[:4] == b"AMPC"
        reports = json.loads((workdir / "reports.json").read_text(encoding="utf-8"))
        assert [r['epoch'] for r in reports] == [0, 1]
        histogram = json.loads((workdir / "rank-histogram.json").read_text(encoding="utf-8"))
        assert histogram['K'] == 3 and sum(histogram['histogram']) == 3

        assert run(['eval', *common]) == 0
        result = json.loads((workdir / "eval.json").read_text(encoding="utf-8"))
        assert 0.0 <= result['accuracy'] <= 1.0

        assert run(['explain', *common, '--sample', '4']) == 0
        doc = json.loads((workdir / "explain" / EXPLANATION_FILE).read_text(encoding="utf-8"))
        assert doc['parts']
        for part in doc['parts']:
            assert (workdir / "explain" / part['heatmap_file']).is_file()
        assert "evidence=" in capsys.readouterr().out

    def test_explain_sample_out_of_range(self, workdir, small_config_file):
        common = _common(small_config_file, workdir)
        assert run(['train', *common]) == 0
        assert run(['explain', *common, '--sample', '12']) == 1

    def test_training_is_reproducible(self, tmp_path, small_config_file):
        first, second = tmp_path / "a", tmp_path / "b"
        assert run(['train', *_common(small_config_file, first), '--seed', '3']) == 0
        assert run(['train', *_common(small_config_file, second), '--seed', '3']) == 0
        assert (first / "model.ampc").read_bytes() == (second / "model.ampc").read_bytes()

    def test_corrupt_checkpoint(self, workdir, small_config_file):
        (workdir / "model.ampc").write_bytes(b"AMPC\x00\x01")
        assert run(['eval', *_common(small_config_file, workdir)]) == 2

    def test_missing_checkpoint(self, workdir, small_config_file):
        assert run(['eval', *_common(small_config_file, workdir),
                    '--checkpoint', str(workdir / "absent.ampc")]) == 2


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

class TestExperiments:
    def test_gradcheck(self, tmp_path, capsys):
        assert run(['gradcheck', '--states', '2', '--out', str(tmp_path)]) == 0
        assert "PASS" in capsys.readouterr().out
        report = json.loads((tmp_path / "gradcheck.json").read_text(encoding="utf-8"))
        assert report['passed'] is True and report['states'] == 2
        assert report['floor'] == 1e-3

    def test_collapse_demo(self, tmp_path, small_config_file):
        assert run(['collapse-demo', *_common(small_config_file, tmp_path)]) == 0
        report = json.loads((tmp_path / "collapse-report.json").read_text(encoding="utf-8"))
        assert len(report['epochs']) == 1
        assert report['final']['amp_residual'] <= 1e-8

    def test_sweep_prints_table(self, tmp_path, small_config_file, capsys):
        assert run(['sweep', *_common(small_config_file, tmp_path), '--epochs', '1']) == 0
        out = capsys.readouterr().out
        assert "variant" in out and "lambda=0.001" in out and "lambda=0.1" in out
        rows = json.loads((tmp_path / "sweep.json").read_text(encoding="utf-8"))
        assert [r['variant'] for r in rows] == ['lambda=0.001', 'lambda=0.1']

    def test_sweep_bad_values(self, tmp_path):
        assert run(['sweep', '--out', str(tmp_path), '--values', '0.1,abc']) == 1

    def test_sweep_negative_lambda_is_a_config_error(self, tmp_path, small_config_file, capsys):
        argv = ['sweep', *_common(small_config_file, tmp_path), '--param', 'lambda',
                '--values=-0.1']
        assert run(argv) == 1
        assert "lam must be" in capsys.readouterr().err
        assert not (tmp_path / "sweep.json").exists()

    def test_sweep_fractional_k_is_a_config_error(self, tmp_path, small_config_file):
        argv = ['sweep', *_common(small_config_file, tmp_path), '--param', 'k',
                '--values', '2.5']
        assert run(argv) == 1
