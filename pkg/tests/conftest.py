import os
from pathlib import Path

import pytest

from sgld_lab.data import PRESET_FILES, data_dir


def _have(name):
    return (data_dir() / PRESET_FILES[name][0]).exists()


requires_german = pytest.mark.skipif(not _have("german-credit"), reason="German Credit CSV not found")
requires_adult = pytest.mark.skipif(not _have("uci-adult"), reason="UCI-adult CSV not found")

slow = pytest.mark.skipif(os.environ.get("SGLD_LAB_FAST") == "1", reason="SGLD_LAB_FAST=1")


@pytest.fixture
def tmp_out(tmp_path) -> Path:
    return tmp_path / "out"


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
