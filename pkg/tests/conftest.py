import pytest

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def acceptance_line(request):
    """Record one PASS/FAIL summary line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(number, title, passed, detail, seconds, budget):
        ok = passed and seconds < budget
        lines.append(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail} "
                     f"[{seconds:.1f}s / {budget:.0f}s]")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[ACCEPTANCE_LINES]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
