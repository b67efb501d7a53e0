"""Shared pytest hooks: acceptance criteria report one line each in the terminal summary."""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split('criterion ')[1].split(':')[0])):
        terminalreporter.write_line(line)
