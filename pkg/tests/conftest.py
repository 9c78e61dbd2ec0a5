"""Collects acceptance verdicts and prints them as one block at the end of the run."""

import pytest

VERDICTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    def record(name: str, ok: bool, detail: str = "") -> None:
        VERDICTS.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}  {detail}".rstrip())
