import pytest

_LINES = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one ``criterion N PASS/FAIL: detail`` line for the terminal summary."""
    def record(n, ok, detail):
        _LINES.append((n, f"criterion {n} {'PASS' if ok else 'FAIL'}: {detail}"))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES, key=lambda x: x[0]):
            terminalreporter.write_line(line)
