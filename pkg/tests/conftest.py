from pathlib import Path

import numpy as np
import pytest

from snnadv import ann
from snnadv.data import Dataset

DATA = Path(__file__).parent / "data"
TRAIN_IMAGES = DATA / "train-images-idx3-ubyte.gz"
TEST_IMAGES = DATA / "t10k-images-idx3-ubyte.gz"


def random_mlp(seed, sizes=(4, 6, 5, 3), bias=True):
    layers = []
    for n in sizes[1:-1]:
        layers += [ann.dense(n, bias), ann.relu()]
    layers.append(ann.dense(sizes[-1], bias))
    model = ann.AnnModel.build((sizes[0],), layers, seed)
    rng = np.random.default_rng(seed)
    for p in model.params:
        if "b" in p:
            p["b"][:] = rng.normal(0, 0.3, p["b"].shape)
    return model


def random_cnn(seed, bias=True):
    layers = [ann.conv2d(2, 3, bias), ann.relu(), ann.avgpool(2), ann.flatten(), ann.dense(3, bias)]
    model = ann.AnnModel.build((1, 4, 4), layers, seed)
    rng = np.random.default_rng(seed)
    for p in model.params:
        if "b" in p:
            p["b"][:] = rng.normal(0, 0.3, p["b"].shape)
    return model


def blobs(n=200, seed=0, dim=2, classes=2, spread=0.15):
    """Gaussian blobs scaled into [-1, 1]."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-0.6, 0.6, (classes, dim))
    y = np.arange(n) % classes
    x = centers[y] + rng.normal(0, spread, (n, dim))
    return Dataset(np.clip(x, -1, 1), y, classes)


@pytest.fixture(scope="session")
def mnist():
    from snnadv.data import load_dataset

    train = load_dataset(TRAIN_IMAGES, "mnist-idx", limit=4000)
    test = load_dataset(TEST_IMAGES, "mnist-idx", limit=500, stats=train.stats)
    return train, test


_criteria = {}


@pytest.fixture(scope="session")
def record_criterion():
    """``record(n, ok, detail)`` stores one line for the end-of-run summary."""

    def record(number, title, ok, detail=""):
        _criteria[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (
            f"\n    {detail}" if detail else "")
        print(_criteria[number])

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_criteria):
            terminalreporter.write_line(_criteria[n])
