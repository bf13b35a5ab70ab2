import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from mtdrive import autodiff as ad

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("mtdrive", deadline=None, max_examples=50)
settings.load_profile("mtdrive")

ad.set_finite_checks(True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance criterion summary: tests register one line each, printed at the
# end of the run so the gate is readable at a glance.

_ACCEPTANCE_RESULTS: list[tuple[int, str, bool]] = []


def record_criterion(number: int, description: str, passed: bool) -> None:
    _ACCEPTANCE_RESULTS.append((number, description, passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, description, passed in sorted(_ACCEPTANCE_RESULTS):
        state = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} [{state}] {description}")
