import numpy as np
import pytest
import torch
import torch.nn as nn

from srdefense.classifier import Classifier, ClassifierSpec, TrainConfig, build, train
from srdefense.data import load_dataset
from srdefense.sr import SRNetSpec, SRTrainConfig, make_sr_pairs, train_sr

FAST_SPEC = ClassifierSpec(widths=(16, 32, 64, 64))


@pytest.fixture(scope="session")
def synthetic_train():
    return load_dataset("synthetic", "train").subset(np.arange(3000))


@pytest.fixture(scope="session")
def synthetic_test():
    return load_dataset("synthetic", "test")


@pytest.fixture(scope="session")
def trained_clf(synthetic_train, synthetic_test):
    """Small CNN fitted on the synthetic shapes; evaluation mode, float32."""
    clf = train(build(FAST_SPEC, seed=0), synthetic_train, TrainConfig(epochs=8, seed=0), eval_set=synthetic_test)
    assert clf.metadata["test_accuracy"] > 0.5
    return clf


@pytest.fixture(scope="session")
def trained_sr(synthetic_train, synthetic_test):
    lr, hr = make_sr_pairs(synthetic_train.images, 2)
    val = make_sr_pairs(synthetic_test.images[:200], 2)
    return train_sr(SRNetSpec(blocks=2, features=16), lr, hr, SRTrainConfig(epochs=6, lr=2e-3, seed=0), val=val)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Linear(nn.Module):
    """Flatten -> affine map; a classifier with closed-form gradients."""

    def __init__(self, weight, bias):
        super().__init__()
        self.fc = nn.Linear(weight.shape[1], weight.shape[0], dtype=torch.float64)  # float32 params would round the weights
        with torch.no_grad():
            self.fc.weight.copy_(torch.as_tensor(weight))
            self.fc.bias.copy_(torch.as_tensor(bias))

    def forward(self, x):
        return self.fc(x.flatten(1))


def linear_classifier(weight, bias):
    """Float64 Classifier over NCHW-flattened pixels."""
    return Classifier(Linear(np.asarray(weight, float), np.asarray(bias, float)))


@pytest.fixture
def random_smallcnn():
    return build(ClassifierSpec(widths=(8, 16, 16, 16)), seed=3).double()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
