import numpy as np
import pytest

from quenchwatch.synth import SynthConfig, generate_corpus, generate_shot


@pytest.fixture(scope="session")
def small_corpus():
    shots, truths = generate_corpus(SynthConfig(n_shots=12, seed=11))
    return shots, truths


@pytest.fixture(scope="session")
def one_shot():
    shot, truth = generate_shot(SynthConfig(seed=3), 0)
    return shot, truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
