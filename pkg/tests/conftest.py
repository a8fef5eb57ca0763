import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from alps.config import TrainingConfig  # noqa: E402
from alps.models import ModelConfig, Networks  # noqa: E402

# small enough that a forward pass takes about a millisecond
TINY = dict(latent_dim=8, resolution=16, encoder_channels=(4, 8, 8),
            decoder_channels=(8, 8, 4, 4, 4, 4), distorter_channels=(4, 8, 8, 8))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def tiny_model_config():
    return ModelConfig(**TINY)


@pytest.fixture
def tiny_training_config():
    return TrainingConfig(epochs=2, batch_size=8, val_inliers=10, val_outliers=10, **TINY)


@pytest.fixture
def tiny_networks(tiny_model_config):
    return Networks.build(tiny_model_config, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
