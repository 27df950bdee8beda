import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, acceptance_log.N_CRITERIA + 1):
        line = acceptance_log.RESULTS.get(n, f"NOT RUN criterion {n:2d}: no result (deselected, skipped or errored before reporting)")
        terminalreporter.write_line(line)
