"""Shared fixtures: deterministic generators and a small reference scenario."""

import numpy as np
import pytest

from phasenav.experiments import default_umi_config


@pytest.fixture
def rng():
    return np.random.default_rng(424242)


@pytest.fixture
def umi_config():
    return default_umi_config(seed=7)
