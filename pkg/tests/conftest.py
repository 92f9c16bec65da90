import pytest

_results_key = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    store = request.config.stash.setdefault(_results_key, {})

    def record(number: int, ok: bool, detail: str, seconds: float | None = None):
        timing = f" [{seconds:.1f} s]" if seconds is not None else ""
        store[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}{timing}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_results_key, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(store):
        terminalreporter.write_line(store[k])
