import json
from pathlib import Path

import numpy as np
import pytest

ORACLE = json.loads((Path(__file__).parent / "oracle" / "values.json").read_text())


@pytest.fixture
def oracle():
    return ORACLE


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
