import sys
from pathlib import Path

import numpy as np
import pytest

# modules live flat at the project root
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from dynamics import KuramotoParams, KuramotoPlant, latin_hypercube  # noqa: E402
from kkl_observer import build_matrices, generate_training_data  # noqa: E402
from neural_transform import ObserverModel, TrainConfig, train  # noqa: E402
import tools  # noqa: E402


@pytest.fixture(autouse=True)
def _quiet_debug():
    tools.set_debug(False)
    yield
    tools.set_debug(False)


@pytest.fixture(scope="session")
def small_plant() -> KuramotoPlant:
    return KuramotoPlant(KuramotoParams.from_seed(3, seed=1), measured=(0, 1))


@pytest.fixture(scope="session")
def small_obs():
    # c = 5, burn-in 5/c = 1
    return build_matrices(3, 2, -5.0, -8.0)


@pytest.fixture(scope="session")
def tiny_dataset(small_plant, small_obs):
    x0 = latin_hypercube(6, [(-1.0, 1.0)] * 3, seed=0)
    return generate_training_data(small_plant, small_obs, x0, 1.0, (0.0, 2.0), 41)


@pytest.fixture(scope="session")
def tiny_train_config() -> TrainConfig:
    return TrainConfig(epochs=4, batch_size=32, hidden_layers=(16, 16), eval_samples=64, learning_rate=5e-3)


@pytest.fixture(scope="session")
def tiny_model(small_plant, small_obs, tiny_dataset, tiny_train_config) -> ObserverModel:
    encoder, decoder, report = train(tiny_dataset, tiny_train_config, small_plant, small_obs)
    return ObserverModel(
        decoder=decoder,
        encoder=encoder,
        obs=small_obs,
        train_config=tiny_train_config,
        report=report,
        plant_description=small_plant.describe(),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
