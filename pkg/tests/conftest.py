import pytest

from eventgraph.pack import find_pack, run_quickstart

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool]] = {}


def record_acceptance(number: int, title: str, passed: bool) -> None:
    ACCEPTANCE_RESULTS[number] = (title, passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}")


@pytest.fixture(scope="session")
def pack():
    return find_pack("diligence")


@pytest.fixture(scope="session")
def quickstart():
    """A completed quickstart runtime; treat as read-only."""
    rt, _ = run_quickstart()
    return rt
