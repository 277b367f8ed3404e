import numpy as np
import pytest

from tilegan.bank import build_bank, cluster_bank
from tilegan.generator import GeneratorSpec, build_toy_generator


@pytest.fixture(scope="session")
def small_gen():
    """n=5 toy generator: 32px output, cheap enough for every test."""
    spec = GeneratorSpec(n=5, latent_dim=16, channels_per_level=(16, 16, 8, 8))
    return build_toy_generator(spec, seed=11)


@pytest.fixture(scope="session")
def small_bank(small_gen):
    """64 samples at l=2, crop 2, rep 8, clustered into 4."""
    bank = build_bank(small_gen, l=2, count=64, c=2, r=8, seed=3)
    return cluster_bank(bank, k=4, max_iters=50, seed=5)
