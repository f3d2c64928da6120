import numpy as np
import pytest

from interrec.pose_core import InteractionLabel, PoseFrame, generate_synthetic

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def static_frame():
    return PoseFrame.from_array(0, np.full((2, 12, 2), 0.5))


@pytest.fixture(scope="session")
def approaching_seq():
    return generate_synthetic(InteractionLabel.APPROACHING, 30, 7)
