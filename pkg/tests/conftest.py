import pytest

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """Store one acceptance outcome for the end-of-run summary."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def record(number: int, name: str, passed: bool, detail: str):
        results[number] = (name, passed, detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        name, passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}")
