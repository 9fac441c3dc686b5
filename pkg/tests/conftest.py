import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the verdict."""
    lines = request.config.stash.setdefault(_LINES, [])

    def emit(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
