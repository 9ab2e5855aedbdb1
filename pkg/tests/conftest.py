import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line for an acceptance criterion."""

    def record(number, title, passed, detail):
        ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
