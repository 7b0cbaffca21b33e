import numpy as np
import pytest

from visq.data import fit_codecs
from visq.instructions import load_corpus
from visq.scenes import generate_scene
from visq.vocab import build_layout


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


@pytest.fixture(scope="session")
def train_scenes():
    return [generate_scene(s) for s in range(60)]


@pytest.fixture(scope="session")
def codecs(corpus, train_scenes):
    layout = build_layout(3, 128, 100, 512)
    return fit_codecs(train_scenes, corpus, layout, iters=25, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
