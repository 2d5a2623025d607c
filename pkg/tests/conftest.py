import pytest

from afqmc_dilation.model import build_hubbard

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def dimer():
    return build_hubbard(2, t=1.0, U=4.0)


@pytest.fixture
def report():
    """Record a PASS/FAIL line that is echoed in the terminal summary."""

    def _report(number: int, title: str, passed: bool, detail: str) -> None:
        _ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {number:>2} {title}: {detail}")

    return _report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
