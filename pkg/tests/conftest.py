import json
from pathlib import Path

import pytest

CONSTANTS = Path(__file__).resolve().parents[1] / "data" / "constants.json"


@pytest.fixture(scope="session")
def constants():
    """Measured constants written by `dislolab calibrate`."""
    if not CONSTANTS.is_file():
        pytest.fail(f"missing {CONSTANTS}; run `dislolab calibrate` first")
    return json.loads(CONSTANTS.read_text())


@pytest.fixture(scope="session")
def bb_params(constants):
    from dislolab.bbsolver import BBParams
    return BBParams(**constants["params"])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
