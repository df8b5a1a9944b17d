from __future__ import annotations

import time

import pytest

from filterscope.toy import PipelineConfig, reseed, run_pipeline

ACCEPTANCE_SEEDS = (0, 1, 2, 3, 4)

_acceptance_lines: list[tuple[int, bool, str]] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Collect one pass/fail line per acceptance criterion for the summary."""
    _acceptance_lines.append((number, ok, detail))
    print(f"ACCEPTANCE {number:02d} {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_acceptance_lines):
        terminalreporter.write_line(
            f"criterion {number:02d}: {'PASS' if ok else 'FAIL'} - {detail}"
        )


@pytest.fixture(scope="session")
def pipeline_runs():
    """Five default-config pipeline runs (seeds 0-4), shared across tests.

    Returns (results, elapsed_seconds); the elapsed time feeds the runtime
    bounds of the desk-scale acceptance criteria.
    """
    start = time.monotonic()
    results = [run_pipeline(reseed(PipelineConfig(), seed)) for seed in ACCEPTANCE_SEEDS]
    return results, time.monotonic() - start
