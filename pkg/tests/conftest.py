import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from seegame.game_core import toy3  # noqa: E402


@pytest.fixture
def toy():
    return toy3(0.9)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criteria verdicts collected by test_acceptance."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: int(k[1:])):
        terminalreporter.write_line(lines[key])
