def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULT_LINES
    if RESULT_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULT_LINES):
            terminalreporter.write_line(RESULT_LINES[number])
