import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def record():
    """Store one summary line per acceptance criterion; returns ``ok`` for chaining."""

    def _record(k: int, ok: bool, detail: str) -> bool:
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[k] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])
