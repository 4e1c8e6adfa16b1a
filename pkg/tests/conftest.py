def pytest_terminal_summary(terminalreporter):
    # replay the acceptance gate verdicts after the normal test listing
    try:
        from test_acceptance import GATE_LINES
    except ImportError:
        return
    if GATE_LINES:
        terminalreporter.section("acceptance gate")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
