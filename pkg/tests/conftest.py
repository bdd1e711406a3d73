import numpy as np
import pytest

from voxelseg.network import ArchitectureConfig

# Smallest architecture every test can afford to forward through: two stages,
# one conv each, dual decoder with per-decoder gates.
TINY = ArchitectureConfig(
    in_channels=1, num_classes=2,
    stage_channels=(2, 4), convs_per_stage=(1, 1),
    decoders=2, attention="per_decoder_per_level",
    gating="same_level", downsample="maxpool")


@pytest.fixture
def gen():
    return np.random.default_rng(0)
