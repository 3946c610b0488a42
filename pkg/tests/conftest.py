import contextlib
import time

ACCEPTANCE_LINES = []


@contextlib.contextmanager
def criterion(number, title):
    """Record one PASS/FAIL line for an acceptance criterion, whatever the outcome."""
    details = {}
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield details
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        extra = ", ".join(f"{k}={v}" for k, v in details.items())
        line = f"criterion {number:>2}: {status}  {title} [{elapsed:.1f}s]" + (f"  ({extra})" if extra else "")
        ACCEPTANCE_LINES.append(line)
        print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
