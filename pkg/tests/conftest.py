import pytest

_acceptance = []


@pytest.fixture
def criterion():
    """Record one acceptance outcome as (number, title, status, detail)."""

    def record(number, title, status, detail=""):
        if isinstance(status, bool):
            status = "PASS" if status else "FAIL"
        _acceptance.append((number, title, status, detail))
        return status

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_acceptance, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")
