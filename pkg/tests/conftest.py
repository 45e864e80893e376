import numpy as np
import pytest

from shapleyvic import mlp, synthetic
from shapleyvic.data import split_dataset

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_ds():
    return synthetic.make_logistic_dataset(1200, (1.5, 1.0, 0.0, 0.5), seed=11)


@pytest.fixture(scope="session")
def small_split(small_ds):
    return split_dataset(small_ds, explain_count=100, train_frac=0.8, seed=3)


@pytest.fixture(scope="session")
def fast_cfg():
    return mlp.TrainConfig(learning_rate=0.05, epochs=8, batch_size=64, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
