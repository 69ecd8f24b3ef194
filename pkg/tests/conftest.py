import os
from pathlib import Path

import numpy as np
import pytest

from wsn_outliers.ingest import synthesize_trace
from wsn_outliers.neighbors import k_nearest_by_distance

FIXTURES = Path(__file__).parent / "fixtures"
INTEL_DIR = Path(os.environ.get("WSN_INTEL_DIR", FIXTURES / "intel"))

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")


@pytest.fixture(scope="session")
def small_trace():
    return synthesize_trace(4, 60, seed=3)


@pytest.fixture(scope="session")
def desk_trace():
    return synthesize_trace(9, 2000, seed=1)


@pytest.fixture(scope="session")
def desk_table(desk_trace):
    return k_nearest_by_distance(desk_trace.locations, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
