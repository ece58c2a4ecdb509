import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from netslice.config import ExperimentConfig  # noqa: E402
from netslice.slicing import generate_scenario  # noqa: E402


def scenario(n_users, seed, config=None):
    cfg = config or ExperimentConfig()
    return generate_scenario(n_users, cfg.slice_counts(n_users), seed, cfg.scenario_config())


@pytest.fixture
def default_config():
    return ExperimentConfig().validate()


@pytest.fixture
def make_scenario():
    return scenario


# one (criterion, passed, detail) entry per acceptance check, printed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
