import sys
from pathlib import Path

# make the oracle and fixture modules importable from every test file
sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import LINES


def pytest_terminal_summary(terminalreporter):
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
