import numpy as np
import pytest
from hypothesis import settings

from rayalign.scenegraph import PruneConfig, prune
from rayalign.simkit import NoiseModel, SimConfig, simulate

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def noiseless_sim():
    return simulate(SimConfig(seed=0, noise=NoiseModel(edge_scale_range=(0.5, 2.0))))


@pytest.fixture(scope="session")
def noiseless_pruned(noiseless_sim):
    return prune(noiseless_sim.graph, PruneConfig())


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
            terminalreporter.write_line(line)
