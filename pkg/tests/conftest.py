from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lidarwater.raster import BitMask, GridGeoref, RasterGrid  # noqa: E402

REPO = Path(__file__).resolve().parent.parent
SCENES = REPO / "scenes"

# (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def make_georef(n_rows, n_cols, cell=0.5, x0=0.0, y0=0.0) -> GridGeoref:
    return GridGeoref(x0, y0, cell, n_cols, n_rows)


def mask_of(bits, cell=0.5) -> BitMask:
    bits = np.asarray(bits, dtype=bool)
    return BitMask(make_georef(*bits.shape, cell=cell), bits)


def grid_of(values, cell=0.5) -> RasterGrid:
    values = np.asarray(values, dtype=np.float64)
    return RasterGrid(make_georef(*values.shape, cell=cell), values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
