import pytest

_LINES = []


@pytest.fixture(scope="session")
def record():
    """Collect one pass/fail line per acceptance criterion."""

    def add(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _LINES.append((number, line))
        print(line)
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
