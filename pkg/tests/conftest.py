import helpers


def pytest_terminal_summary(terminalreporter):
    if helpers.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(helpers.ACCEPTANCE):
            terminalreporter.write_line(helpers.ACCEPTANCE[k])
