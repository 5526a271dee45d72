import numpy as np
import pytest

from layerfusion.data import synth_dataset
from layerfusion.net import Layer, NetworkModel, init_model
from layerfusion.training import fit

ACCEPTANCE_LINES: list[str] = []


def record(number: int, ok: bool, detail: str):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_model(sizes, seed=0, activation="tanh", loss="cross_entropy_softmax"):
    return init_model(sizes, activation, loss, seed=seed)


def square_model(n_layers=5, width=6, seed=0):
    """Model whose hidden layers are all width x width."""
    return random_model([3] + [width] * (n_layers - 1) + [2], seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def blobs():
    return synth_dataset("blobs", n_per_class=50, classes=4, noise=0.1, seed=0)


@pytest.fixture(scope="session")
def trained_blobs(blobs):
    model = init_model([2, 32, 32, 32, 32, 4], "tanh", seed=0)
    return fit(model, blobs, epochs=200, lr=0.05, seed=0)


def make_layer(w, b=None, activation="tanh"):
    w = np.asarray(w, dtype=float)
    return Layer(w, np.zeros(w.shape[1]) if b is None else np.asarray(b, float), activation)


def make_model(weights, activation="tanh", loss="mse"):
    layers = [make_layer(w, activation=activation) for w in weights]
    layers[-1] = make_layer(layers[-1].weight, activation="identity")
    return NetworkModel(layers, loss)
