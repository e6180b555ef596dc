import numpy as np
import pytest

from coge import gnn, graphs


@pytest.fixture(scope="session")
def tiny_ds() -> graphs.Dataset:
    """40 small graphs, enough for contrast pools on both labels."""
    return graphs.generate_cycliq(40, seed=11)


@pytest.fixture(scope="session")
def tiny_model(tiny_ds):
    """A briefly trained model: good enough for contract tests, cheap."""
    model, _ = gnn.train(tiny_ds, gnn.TrainConfig(epochs=40, batch_size=8, seed=2))
    return model


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
