import numpy as np
import pytest

from lfpstage.pipeline import preprocess
from lfpstage.synth import SynthConfig, generate

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_night():
    return generate(SynthConfig(n_epochs_per_stage=6, seed=3))


@pytest.fixture(scope="session")
def small_segments(small_night):
    return preprocess(*small_night)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
