import pytest

ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one acceptance line: ``report(number, passed, detail)``."""
    def _record(number, passed, detail):
        ACCEPTANCE[number] = (passed, detail)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
