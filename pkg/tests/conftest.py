import os
from pathlib import Path

import pytest

KERNEL_CACHE = Path(os.environ.get("CRDSA_TEST_CACHE", Path(__file__).resolve().parents[1] / ".kernel-cache"))


@pytest.fixture(scope="session")
def kernel_cache() -> Path:
    """Persistent kernel cache shared by the long-running tests."""
    KERNEL_CACHE.mkdir(parents=True, exist_ok=True)
    return KERNEL_CACHE


ACCEPTANCE: dict[int, str] = {}


def report(number: int, checks) -> tuple[bool, str]:
    """Record one acceptance line from ``(label, ok, detail)`` checks."""
    ok = all(c[1] for c in checks)
    parts = "; ".join(f"{label} {'ok' if good else 'MISS'} ({detail})" for label, good, detail in checks)
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {parts}"
    ACCEPTANCE[number] = line
    print(line)
    return ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
