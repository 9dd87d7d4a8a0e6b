"""Station forcing ingestion: loading, gap auditing, imputation and splits.

A station record is a daily CSV with columns

    date,precip_mm,evap_mm,tmin_c,tmax_c,vprp_hpa,streamflow_mmd

Dates are ISO ``YYYY-MM-DD``, one row per day, and an empty cell marks a
missing observation.  Loading re-indexes onto a gap-free daily calendar,
audits missingness per variable, rejects stations that are too patchy to
impute honestly, fills interior gaps by linear interpolation and trims
leading/trailing days that are still incomplete.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# Column order of the on-disk format.
CSV_COLUMNS = (
    "date",
    "precip_mm",
    "evap_mm",
    "tmin_c",
    "tmax_c",
    "vprp_hpa",
    "streamflow_mmd",
)

# Internal variable names, aligned with CSV_COLUMNS[1:].
VARIABLES = ("precip", "evap", "tmin", "tmax", "vprp", "streamflow")

# Variables that cannot be negative on physical grounds.
_NON_NEGATIVE = ("precip", "evap", "streamflow")

# A station is rejected when any variable is missing more often than this.
DEFAULT_MAX_MISSING = 0.10

DEFAULT_TRAIN_FRACTION = 0.6


class LoadError(ValueError):
    """Malformed station CSV.  The message names the offending row."""


class ZeroVarianceError(ValueError):
    """A variable is constant, so z-scoring it would divide by zero."""


@dataclass(frozen=True)
class GapReport:
    """Missing-data audit for one station.

    Attributes
    ----------
    station_id : str
    total_days : int
        Length of the gap-free daily calendar the record was indexed onto.
    missing : dict
        Variable name -> count of missing days.
    fractions : dict
        Variable name -> missing count / total_days.
    """

    station_id: str
    total_days: int
    missing: dict[str, int]
    fractions: dict[str, float]

    def worst(self) -> tuple[str, float]:
        name = max(self.fractions, key=self.fractions.get)
        return name, self.fractions[name]

    def to_dict(self) -> dict:
        return {
            "station_id": self.station_id,
            "total_days": self.total_days,
            "missing": dict(self.missing),
            "fractions": dict(self.fractions),
        }


class StationRejectedError(ValueError):
    """Station exceeds the allowed missing fraction for some variable."""

    def __init__(self, report: GapReport, max_missing: float):
        self.report = report
        self.max_missing = max_missing
        name, frac = report.worst()
        super().__init__(
            f"station {report.station_id!r} rejected: variable {name!r} is "
            f"{frac:.1%} missing (limit {max_missing:.0%})"
        )


@dataclass
class ForcingSeries:
    """Daily forcing and observed streamflow for one station.

    ``dates`` is a contiguous daily calendar (``datetime64[D]``) and every
    variable array has the same length.  Missing observations are NaN;
    after :func:`audit_and_impute` the arrays are dense.
    """

    station_id: str
    dates: np.ndarray
    precip: np.ndarray
    evap: np.ndarray
    tmin: np.ndarray
    tmax: np.ndarray
    vprp: np.ndarray
    streamflow: np.ndarray

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        for name in VARIABLES:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if arr.shape != self.dates.shape:
                raise ValueError(
                    f"variable {name!r} has length {arr.size}, "
                    f"expected {self.dates.size}"
                )
        if self.dates.size >= 2:
            steps = np.diff(self.dates).astype("timedelta64[D]").astype(int)
            if not np.all(steps == 1):
                raise ValueError("dates must be contiguous daily steps")
        for name in _NON_NEGATIVE:
            vals = getattr(self, name)
            if np.any(vals[np.isfinite(vals)] < 0.0):
                raise ValueError(f"variable {name!r} contains negative values")

    def __len__(self) -> int:
        return int(self.dates.size)

    def variable(self, name: str) -> np.ndarray:
        if name not in VARIABLES:
            raise KeyError(f"unknown variable {name!r}")
        return getattr(self, name)

    def slice(self, start: int, stop: int) -> "ForcingSeries":
        return ForcingSeries(
            station_id=self.station_id,
            dates=self.dates[start:stop],
            **{name: getattr(self, name)[start:stop] for name in VARIABLES},
        )

    def is_dense(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, v))) for v in VARIABLES)


def _parse_float(text: str, column: str, row: int) -> float:
    text = text.strip()
    if text == "":
        return np.nan
    try:
        value = float(text)
    except ValueError as exc:
        raise LoadError(f"row {row}: column {column!r} is not numeric: {text!r}") from exc
    return value


def load_station(path: str | Path, station_id: str | None = None) -> ForcingSeries:
    """Read one station CSV onto a gap-free daily calendar.

    Parameters
    ----------
    path : str or Path
        CSV file with the columns in :data:`CSV_COLUMNS`.
    station_id : str, optional
        Defaults to the file stem.

    Returns
    -------
    ForcingSeries
        Missing observations (empty cells, or calendar days absent from the
        file) are NaN.

    Raises
    ------
    LoadError
        On a malformed header, an unparseable date or number, a duplicated
        or out-of-order date, or a negative flux value.  The message names
        the offending row (1-based, counting the header as row 1).
    """
    path = Path(path)
    if station_id is None:
        station_id = path.stem

    rows: list[tuple[date, dict[str, float]]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        if set(header) != set(CSV_COLUMNS) or len(header) != len(CSV_COLUMNS):
            raise LoadError(
                f"{path}: bad header {header!r}, expected columns {list(CSV_COLUMNS)}"
            )
        col_index = {name: header.index(name) for name in CSV_COLUMNS}

        prev: date | None = None
        for row_num, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(CSV_COLUMNS):
                raise LoadError(f"row {row_num}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            raw_date = row[col_index["date"]].strip()
            try:
                day = date.fromisoformat(raw_date)
            except ValueError as exc:
                raise LoadError(f"row {row_num}: bad date {raw_date!r}") from exc
            if prev is not None:
                if day == prev:
                    raise LoadError(f"row {row_num}: duplicate date {raw_date}")
                if day < prev:
                    raise LoadError(f"row {row_num}: date {raw_date} out of order")
            prev = day

            values = {}
            for name, column in zip(VARIABLES, CSV_COLUMNS[1:]):
                value = _parse_float(row[col_index[column]], column, row_num)
                if name in _NON_NEGATIVE and np.isfinite(value) and value < 0.0:
                    raise LoadError(f"row {row_num}: column {column!r} is negative: {value}")
                values[name] = value
            rows.append((day, values))

    if not rows:
        raise LoadError(f"{path}: no data rows")

    first, last = rows[0][0], rows[-1][0]
    n_days = (last - first).days + 1
    arrays = {name: np.full(n_days, np.nan) for name in VARIABLES}
    for day, values in rows:
        idx = (day - first).days
        for name in VARIABLES:
            arrays[name][idx] = values[name]

    dates = np.arange(
        np.datetime64(first.isoformat(), "D"),
        np.datetime64(last.isoformat(), "D") + 1,
    )
    logger.info("loaded station %s: %d days (%s to %s)", station_id, n_days, first, last)
    return ForcingSeries(station_id=station_id, dates=dates, **arrays)


def audit(series: ForcingSeries) -> GapReport:
    """Count missing days per variable over the full calendar."""
    total = len(series)
    missing = {name: int(np.isnan(series.variable(name)).sum()) for name in VARIABLES}
    fractions = {name: missing[name] / total for name in VARIABLES}
    return GapReport(
        station_id=series.station_id,
        total_days=total,
        missing=missing,
        fractions=fractions,
    )


def audit_and_impute(
    series: ForcingSeries, max_missing: float = DEFAULT_MAX_MISSING
) -> tuple[ForcingSeries, GapReport]:
    """Audit gaps, reject patchy stations, fill the rest.

    Interior gaps are filled by linear interpolation per variable.  Days at
    either end of the record where any variable is still missing are
    trimmed rather than extrapolated.

    Returns
    -------
    (ForcingSeries, GapReport)
        The dense series and the pre-imputation audit.

    Raises
    ------
    StationRejectedError
        If any variable is missing on more than ``max_missing`` of days.
    """
    report = audit(series)
    for name, frac in report.fractions.items():
        if frac > max_missing:
            raise StationRejectedError(report, max_missing)

    # Trim ends first so every remaining gap is interior for every variable.
    present = np.ones(len(series), dtype=bool)
    for name in VARIABLES:
        present &= np.isfinite(series.variable(name))
    if not present.any():
        raise StationRejectedError(report, max_missing)
    first = int(np.argmax(present))
    last = len(series) - int(np.argmax(present[::-1]))
    trimmed = series.slice(first, last)

    x = np.arange(len(trimmed), dtype=np.float64)
    filled = {}
    for name in VARIABLES:
        vals = trimmed.variable(name).copy()
        ok = np.isfinite(vals)
        if not ok.all():
            vals[~ok] = np.interp(x[~ok], x[ok], vals[ok])
        filled[name] = vals

    dense = ForcingSeries(station_id=series.station_id, dates=trimmed.dates, **filled)
    n_trimmed = len(series) - len(dense)
    if n_trimmed:
        logger.info("station %s: trimmed %d incomplete edge days", series.station_id, n_trimmed)
    return dense, report


def chronological_split(
    series: ForcingSeries, train_fraction: float = DEFAULT_TRAIN_FRACTION
) -> tuple[ForcingSeries, ForcingSeries]:
    """Split a series into a leading train block and trailing test block.

    The train block holds the first ``floor(train_fraction * len(series))``
    days.  Concatenating the two blocks reproduces the input exactly.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    if len(series) < 2:
        raise ValueError("series too short to split")
    n_train = int(np.floor(train_fraction * len(series)))
    n_train = max(1, n_train)
    return series.slice(0, n_train), series.slice(n_train, len(series))


@dataclass
class Normalizer:
    """Column-wise z-score transform with population statistics.

    Fitted on training data only.  ``transform`` and ``inverse`` accept any
    array whose trailing axis matches the number of fitted columns, except
    for a single-column normalizer which accepts arrays of any shape.
    """

    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.names = tuple(self.names)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (len(self.names),) or self.std.shape != (len(self.names),):
            raise ValueError("mean/std must have one entry per column name")
        if np.any(self.std <= 0.0) or not np.all(np.isfinite(self.std)):
            raise ZeroVarianceError("all column stds must be finite and positive")

    @classmethod
    def fit(cls, values: np.ndarray, names: tuple[str, ...]) -> "Normalizer":
        """Fit from a 2-D array of shape (n_rows, len(names)).

        Uses the population standard deviation (divide by N).  A constant
        column raises :class:`ZeroVarianceError` naming the column.
        """
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] != len(names):
            raise ValueError(f"expected (n, {len(names)}) array, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("cannot fit a normalizer on non-finite values")
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        for name, s in zip(names, std):
            if s <= 0.0:
                raise ZeroVarianceError(f"variable {name!r} is constant on the training split")
        return cls(names=tuple(names), mean=mean, std=std)

    @classmethod
    def identity(cls, names: tuple[str, ...]) -> "Normalizer":
        k = len(names)
        return cls(names=tuple(names), mean=np.zeros(k), std=np.ones(k))

    def _check(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if len(self.names) == 1:
            return values
        if values.ndim == 0 or values.shape[-1] != len(self.names):
            raise ValueError(
                f"trailing axis must have size {len(self.names)}, got shape {values.shape}"
            )
        return values

    def transform(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        return values * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            name: {"mean": float(m), "std": float(s)}
            for name, m, s in zip(self.names, self.mean, self.std)
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Normalizer":
        names = tuple(payload)
        mean = np.array([payload[n]["mean"] for n in names])
        std = np.array([payload[n]["std"] for n in names])
        return cls(names=names, mean=mean, std=std)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Normalizer":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_normalizer(series: ForcingSeries, variables: tuple[str, ...] = VARIABLES) -> Normalizer:
    """Fit a z-score normalizer over the given series variables."""
    matrix = np.stack([series.variable(name) for name in variables], axis=1)
    return Normalizer.fit(matrix, variables)


def write_station_csv(path: str | Path, series: ForcingSeries) -> None:
    """Write a series back to the on-disk CSV format (NaN -> empty cell)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i in range(len(series)):
            row = [str(series.dates[i])]
            for name in VARIABLES:
                v = series.variable(name)[i]
                row.append("" if not np.isfinite(v) else f"{v:.6f}")
            writer.writerow(row)
