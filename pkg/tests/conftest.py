import numpy as np
import pytest
from hypothesis import settings

from lidar_forge import SensorModel
from lidar_forge.synth import write_fixture_dataset

# Index building on the full-size grid is allocation-heavy enough that
# hypothesis' per-example deadline misfires under load; disable it.
settings.register_profile("suite", deadline=None)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def sensor():
    return SensorModel()


@pytest.fixture(scope="session")
def small_sensor():
    # Few enough cells that modest random clouds produce real collisions.
    return SensorModel(num_beams=8, num_columns=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    """A small synthetic dataset in SemanticKITTI layout, built once."""
    root = tmp_path_factory.mktemp("fixture-data")
    write_fixture_dataset(
        root, seed=7, sequences=("00", "01"), frames_per_sequence=6, n_background=1600
    )
    return root
