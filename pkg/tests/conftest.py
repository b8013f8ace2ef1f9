import numpy as np
import pytest

from airmimo.tensor import sample_complex_gaussian


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def crandn(gen, *shape):
    return sample_complex_gaussian(gen, shape, 1.0)


# verdict lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("]")[1].split(".")[0])):
            terminalreporter.write_line(line)
