import numpy as np
import pytest

from gaplab.data import synth_dataset

_acceptance_outcomes = []


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call" and "test_acceptance" in item.nodeid:
        _acceptance_outcomes.append((item.nodeid.split("::")[-1], rep.passed))
    return rep


def pytest_terminal_summary(terminalreporter):
    if _acceptance_outcomes:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, passed in _acceptance_outcomes:
            terminalreporter.write_line(("PASS  " if passed else "FAIL  ") + name)
from gaplab.network import HyperConfig, build_nin
from gaplab.rng import make_rng
from gaplab.train import TrainSettings, train_model


def tiny_config(**overrides) -> HyperConfig:
    base = dict(
        batch_size=32,
        dropout=0.0,
        learning_rate=0.1,
        depth=2,
        optimizer="momentum-sgd",
        weight_decay=0.0,
        width=8,
    )
    base.update(overrides)
    return HyperConfig(**base)


@pytest.fixture(scope="session")
def blob_data():
    return synth_dataset(num_classes=10, per_class=48, image_size=16, seed=3, test_per_class=64)


@pytest.fixture(scope="session")
def trained_record(blob_data):
    settings = TrainSettings(threshold=0.1, max_steps=1500, eval_every=50, eval_batches=20, grad_noise_samples=96)
    record = train_model(tiny_config(), blob_data, seed=11, settings=settings)
    assert record.converged
    return record


@pytest.fixture()
def small_net():
    net, init = build_nin(tiny_config(width=6), (3, 8, 8), 4, make_rng(5, 0))
    return net, init


def random_f64_net(depth=2, width=6, image=8, classes=4, seed=5):
    net, init = build_nin(tiny_config(depth=depth, width=width), (3, image, image), classes, make_rng(seed, 0))
    return net.astype(np.float64), init
