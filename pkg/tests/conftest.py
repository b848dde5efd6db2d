"""Shared helpers: the acceptance tests record one summary line per criterion
and this hook prints them at the end of the pytest run."""

_RESULTS = []


def record(criterion: int, passed: bool, detail: str = "") -> None:
    _RESULTS.append((criterion, passed, detail))


def check(criterion: int, passed: bool, detail: str = "") -> None:
    """Record the outcome, then fail the test if it did not hold."""
    record(criterion, passed, detail)
    assert passed, f"ACCEPTANCE {criterion}: FAIL - {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_RESULTS):
        status = "PASS" if passed else "FAIL"
        suffix = f" - {detail}" if detail else ""
        terminalreporter.write_line(f"ACCEPTANCE {criterion}: {status}{suffix}")
