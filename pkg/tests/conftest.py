from pathlib import Path

import pytest

DATA = Path(__file__).resolve().parent.parent / "data"
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, passed, detail, seconds):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  ({seconds:.2f} s)  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
