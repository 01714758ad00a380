import pytest

_LINES = []


class Criterion:
    def __init__(self):
        self.number = None
        self.done = False

    def __call__(self, number):
        self.number = number
        return self

    def report(self, passed, detail):
        self.done = True
        line = f"criterion {self.number}: {'PASS' if passed else 'FAIL'} | {detail}"
        _LINES.append(line)
        print(line)
        return passed


@pytest.fixture
def criterion():
    """Records one pass/fail line per acceptance criterion for the terminal summary."""
    crit = Criterion()
    yield crit
    if crit.number is not None and not crit.done:
        crit.report(False, "raised before completing")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
