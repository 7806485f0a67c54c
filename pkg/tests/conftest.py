import os
import sys
import time
from types import SimpleNamespace

import pytest

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_log  # noqa: E402


@pytest.fixture(scope="session")
def synthetic():
    """The seeded 8-class x 300 synthetic set, with its generation time."""
    from gesture_hci import synth
    t0 = time.perf_counter()
    ds = synth.synth_dataset(classes=8, per_class=300, seed=0)
    return SimpleNamespace(dataset=ds, seconds=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def trained(synthetic):
    """A model trained on the synthetic set with the default optimiser
    settings. Shared by the acceptance and end-to-end tests."""
    from gesture_hci import cnn
    t0 = time.perf_counter()
    res = cnn.train(synthetic.dataset, cnn.TrainConfig(alpha=1e-4, mu=0.9, epochs=30, seed=0))
    return SimpleNamespace(dataset=synthetic.dataset, result=res,
                           train_s=time.perf_counter() - t0)


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
