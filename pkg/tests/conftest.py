"""Shared fixtures and helpers for the test suite."""

import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qhydro.ingest import CSV_COLUMNS, ForcingSeries

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def pytest_terminal_summary(terminalreporter):
    """Echo the one-line acceptance results after the run."""
    try:
        from test_acceptance import REPORT_LINES
    except ImportError:
        return
    if REPORT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in REPORT_LINES:
            terminalreporter.write_line(line)


def make_series(n_days: int = 40, seed: int = 0, station_id: str = "t1",
                start: str = "1990-01-01") -> ForcingSeries:
    """Build a small deterministic forcing series for unit tests."""
    rng = np.random.default_rng(seed)
    dates = np.datetime64(start, "D") + np.arange(n_days)
    return ForcingSeries(
        station_id=station_id,
        dates=dates,
        precip=rng.gamma(1.2, 4.0, n_days),
        evap=rng.uniform(0.5, 5.0, n_days),
        tmin=rng.normal(8.0, 3.0, n_days),
        tmax=rng.normal(20.0, 3.0, n_days),
        vprp=rng.uniform(5.0, 25.0, n_days),
        streamflow=rng.gamma(1.5, 1.0, n_days),
    )


def write_rows(path: Path, rows: list[list[str]], header: list[str] | None = None) -> Path:
    """Write raw CSV rows, defaulting to the canonical header."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(list(CSV_COLUMNS) if header is None else header)
        writer.writerows(rows)
    return path


def row(date: str, *values: object) -> list[str]:
    return [date] + [str(v) for v in values]


@pytest.fixture
def series() -> ForcingSeries:
    return make_series()


@pytest.fixture
def station_csv(tmp_path, series) -> Path:
    from qhydro.ingest import write_station_csv

    path = tmp_path / "t1.csv"
    write_station_csv(path, series)
    return path
