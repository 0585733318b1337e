import numpy as np
import pytest
from hypothesis import settings

from ofmtss.pulse import WaveformConfig, design_prototype

settings.register_profile("ofmtss", deadline=None, max_examples=40)
settings.load_profile("ofmtss")

# one line per acceptance criterion, echoed in the terminal summary
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])


@pytest.fixture(scope="session")
def bank():
    return design_prototype()


@pytest.fixture(scope="session")
def small_bank():
    """N = 8 (L = 16) waveform for fast end-to-end checks."""
    return design_prototype(WaveformConfig(N=8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
