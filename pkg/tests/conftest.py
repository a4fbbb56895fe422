from pathlib import Path

import numpy as np
import pytest

from morsecluster import mixture

DATA = Path(mixture.__file__).parent / "data"


def load(name):
    return mixture.load_model(DATA / f"{name}.json")


def random_model(rng, d, k):
    weights = rng.dirichlet(np.ones(k) * 2)
    means = rng.normal(0, 2, (k, d))
    covs = []
    for _ in range(k):
        A = rng.normal(size=(d, d))
        covs.append(A @ A.T / d + 0.3 * np.eye(d))
    return mixture.MixtureModel.from_arrays(weights, means, np.array(covs))


@pytest.fixture
def twin_gaussians_2d():
    return load("twin_gaussians_2d")


@pytest.fixture
def bimodal1d():
    return load("symmetric_bimodal_1d")


@pytest.fixture
def std1d():
    return load("standard_normal_1d")


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
