import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from svo_cav.core import default_config  # noqa: E402


@pytest.fixture
def cfg():
    return default_config()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
