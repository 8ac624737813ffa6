import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")
_outcomes: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or "test_acceptance.py" not in report.nodeid:
        return
    n = int(m.group(1))
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        status = "FAIL" if failed else "PASS"
        if _outcomes.get(n, ("", ""))[0] != "FAIL":
            _outcomes[n] = (status, m.group(2).replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        status, name = _outcomes[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {name}")
