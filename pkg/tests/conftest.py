"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""
import pytest

VERDICTS: dict[int, str] = {}


@pytest.fixture(scope="session")
def verdict():
    def record(number: int, ok: bool, detail: str, soft: bool = False) -> bool:
        status = "PASS" if ok else ("SOFT" if soft else "FAIL")
        VERDICTS[number] = f"criterion {number:>2}: {status}  {detail}"
        print(VERDICTS[number])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[number])
