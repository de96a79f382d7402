import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}


def record(number, ok, detail):
    _RESULTS[number] = (ok, detail)
    print(f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        ok, detail = _RESULTS[number]
        terminalreporter.write_line(f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")
