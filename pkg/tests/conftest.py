import numpy as np
import pytest
import torch

from afog.victim.reference import reference_detector, test_split
from afog.victim.toy import ToyConfig, ToyDetector, ToyNet

N_FIXTURES = 20


@pytest.fixture(scope="session")
def detector():
    return reference_detector()


@pytest.fixture(scope="session")
def test_data():
    return test_split()


@pytest.fixture(scope="session")
def fixtures(test_data):
    """The first 20 held-out images with their ground truth."""
    return [(test_data.images[i], test_data.targets[i]) for i in range(N_FIXTURES)]


@pytest.fixture(scope="session")
def untrained():
    torch.manual_seed(123)
    return ToyDetector(ToyNet(ToyConfig()))


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
