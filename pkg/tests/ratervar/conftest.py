import os

import numpy as np
import pytest

RUN_SLOW = os.environ.get("RATERVAR_RUN_SLOW") == "1"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long running experiment, set RATERVAR_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set RATERVAR_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_dataset():
    """Four 16x16 images, two raters (one faithful, one confuser) and gold."""
    from ratervar.data.synthesize import GenerationConfig, generate_split

    cfg = GenerationConfig(
        train=4, test=0, size=16, classes=3, shapes=2, raters="faithful,confuser:1:2:0.8", jitter=0, seed=5
    )
    return generate_split(cfg, "train").dataset


@pytest.fixture
def small_model():
    from ratervar.latent.gaussian import init_bank
    from ratervar.network.model import SegModel

    model = SegModel.init(3, latentDim=4, featureChannels=8, seed=1)
    bank = init_bank(2, D=4, seed=2)
    return model, bank


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
