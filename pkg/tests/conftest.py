import pytest

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def add(number, passed, detail):
        line = f"AC{number:<2} {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
