import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


class CriterionLog:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, number: int, title: str, passed: bool, detail: str = ""):
        _CRITERIA[number] = (title, bool(passed), detail)


@pytest.fixture(scope="session")
def criterion_log():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        mark = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{mark}] criterion {number:2d}: {title}  {detail}".rstrip())
