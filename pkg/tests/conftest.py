"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""
import pytest

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """``verdict(n, name, ok, detail)`` records the outcome, then asserts it."""
    def record(n: int, name: str, ok: bool, detail: str = "") -> None:
        _VERDICTS[n] = f"criterion {n:2d} {name:<28s} {'PASS' if ok else 'FAIL'}  {detail}"
        print(_VERDICTS[n])
        assert ok, _VERDICTS[n]
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[n])
