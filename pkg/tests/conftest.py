"""Shared fixtures and the acceptance-criteria reporting hook.

Acceptance tests record one PASS/FAIL line each; the terminal-summary hook
replays them at the end of the run so the verdicts are visible even when
pytest captures stdout.
"""

import numpy as np
import pytest

from introdiff import CovariateRaster, build_grid

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record():
    """Log a criterion verdict, then assert it."""

    def _record(ok: bool, line: str) -> None:
        verdict = f"[{'PASS' if ok else 'FAIL'}] {line}"
        ACCEPTANCE_LINES.append(verdict)
        print(verdict)
        assert ok, line

    return _record


@pytest.fixture
def small_grid():
    """6x6 fine cells of 10 km, ratio 1; the center cells are interior."""
    return build_grid((0.0, 0.0, 60.0, 60.0), 10.0, 10.0)


def constant_raster(grid, **layers) -> CovariateRaster:
    """Covariates that are spatially constant; values given per layer name."""
    cov = CovariateRaster(grid)
    shape = (grid.n_fine_rows, grid.n_fine_cols)
    for name, value in layers.items():
        cov.add_layer(name, np.full(shape, float(value)))
    return cov


@pytest.fixture
def make_constant_cov():
    return constant_raster
