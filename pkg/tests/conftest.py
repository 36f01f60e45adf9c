import pytest

from gridconsensus import builtin_four_area, run_closed_loop, run_decoupled

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def four_area():
    return builtin_four_area()


@pytest.fixture(scope="session")
def closed_trace(four_area):
    return run_closed_loop(four_area)


@pytest.fixture(scope="session")
def decoupled_trace(four_area):
    return run_decoupled(four_area)


@pytest.fixture
def acceptance_line():
    def record(number, title, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})")
        print(ACCEPTANCE_LINES[-1])

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
