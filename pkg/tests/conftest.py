import pytest


@pytest.fixture
def acceptance(request):
    """Record a PASS/FAIL line for an acceptance criterion; lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_KEY, [])

    def record(criterion, ok, detail=""):
        line = f"{criterion} {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        lines.append(line)
        print(line)
        return ok

    return record


_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[0][2:])):
            terminalreporter.write_line(line)
