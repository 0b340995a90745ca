import pytest

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture
def record(request):
    """Store a one-line verdict for an acceptance criterion."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def _record(number: int, passed: bool, detail: str) -> None:
        results[number] = (passed, detail)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
