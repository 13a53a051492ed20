import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("bagknot", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "bagknot"))

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def template():
    from bagknot.bagsim import synthesize_template

    return synthesize_template(seed=0)


@pytest.fixture(scope="session")
def tiny_encoder():
    """Untrained small encoder (weights are random but fixed)."""
    from bagknot.encoder import EncoderConfig, EncoderWeights

    return EncoderWeights.init(EncoderConfig.desk(), seed=0)


@pytest.fixture(scope="session")
def vc_frame(template):
    from bagknot.bagsim import render_frame, sample_family

    return render_frame(template, sample_family("VC", 3), n_pc=512, seed=3)


def random_cloud(rng, n):
    return rng.normal(size=(n, 3)) * rng.uniform(0.2, 3.0) + rng.uniform(-5, 5, size=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
