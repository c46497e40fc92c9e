"""Shared test plumbing: collects acceptance-criterion verdict lines."""

ACCEPTANCE: list[str] = []


def record(num: int, slug: str, ok: bool, detail: str) -> bool:
    """Store and echo one pass/fail line for an acceptance criterion."""
    line = f"criterion {num:02d} {slug}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
