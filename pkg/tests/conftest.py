import pytest

_LINES: list[str] = []


class CriterionLog:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __call__(self, tag: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} [{tag}] {detail}".rstrip()
        _LINES.append(line)
        print(line)
        return ok

    def info(self, tag: str, detail: str):
        line = f"INFO [{tag}] {detail}"
        _LINES.append(line)
        print(line)


@pytest.fixture(scope="session")
def criterion():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
