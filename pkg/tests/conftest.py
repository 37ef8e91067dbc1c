import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-gate pass/fail lines after the run summary."""
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance" and module is not None:
            lines = getattr(module, "GATE_LINES", None)
            if lines:
                terminalreporter.section("acceptance gate")
                for line in lines:
                    terminalreporter.write_line(line)
            return
