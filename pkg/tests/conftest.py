"""
Pytest configuration to import the package directly from the repo without installation.
"""
import sys
from pathlib import Path

import pytest

# Add project root to sys.path
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from amp_prototypes.collapse_lab import gen_synthetic  # noqa: E402
from amp_prototypes.modules.config_loader import SyntheticSpec, TrainingConfig  # noqa: E402
from amp_prototypes.trainer import initialize_model  # noqa: E402


SMALL_TOML = """\
[training]
epochs = 2
batch_size = 8
K = 3
feature_depth = 6

[synthetic]
classes = 3
channels = 6
height = 3
width = 3
parts = 2
samples_per_class = 4

[collapse_demo]
epochs = 1
K = 2

[sweep]
values = [0.001, 0.1]
"""


@pytest.fixture
def small_spec():
    """Three classes, six channels, a 3x3 grid and two planted parts."""
    return SyntheticSpec(classes=3, channels=6, height=3, width=3, parts=2,
                         samples_per_class=4, seed=0)


@pytest.fixture
def small_cfg():
    return TrainingConfig(epochs=2, batch_size=4, lr_max=0.01, lr_min=0.001, K=3,
                          feature_depth=6, seed=0)


@pytest.fixture
def small_data(small_spec):
    return gen_synthetic(small_spec)


@pytest.fixture
def small_model(small_data, small_cfg):
    return initialize_model(small_data, small_cfg)


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_TOML, encoding="utf-8")
    return path


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains full-size models on synthetic data")
