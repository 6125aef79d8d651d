import numpy as np
import pytest
from hypothesis import settings

from landmark_cascade.dataset import SynthConfig, generate_synthetic

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# acceptance outcomes collected for the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def small_train():
    return generate_synthetic(SynthConfig(count=40, image_size=64, k=5, seed=11, id_prefix="tr"))


@pytest.fixture(scope="session")
def small_test():
    return generate_synthetic(SynthConfig(count=8, image_size=64, k=5, seed=12, id_prefix="te"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
