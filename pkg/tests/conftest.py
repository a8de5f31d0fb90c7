import sys


def pytest_terminal_summary(terminalreporter):
    # acceptance tests record one line per criterion; echo them after the run
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
