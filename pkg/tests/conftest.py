import time

ACCEPTANCE_LINES: list[str] = []
SUITE_BUDGET_S = 180.0
_start = time.perf_counter()


def record(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = time.perf_counter() - _start
    if not ACCEPTANCE_LINES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        tr.write_line(line)
    ok = elapsed < SUITE_BUDGET_S
    tr.write_line(f"[9] full suite wall-clock {elapsed:.1f}s (budget {SUITE_BUDGET_S:.0f}s): "
                  f"{'PASS' if ok else 'FAIL'}")


def pytest_sessionfinish(session, exitstatus):
    if ACCEPTANCE_LINES and time.perf_counter() - _start >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = 1
