"""Hybrid feature rows and sliding-window datasets.

Each day contributes a nine-field feature row: the five meteorological
inputs followed by four production-store fluxes obtained by running the
calibrated store over the forcing,

    [precip, evap, tmin, tmax, vprp, pn, en, ps, perc]

Windows pair ``alpha`` consecutive feature rows with the ``horizon``
streamflow values that immediately follow, so a series of N days yields
``N - alpha - horizon + 1`` windows.  Inputs and targets are z-scored
with normalizers fitted on the training split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gr4j
from .ingest import ForcingSeries, Normalizer

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "precip",
    "evap",
    "tmin",
    "tmax",
    "vprp",
    "pn",
    "en",
    "ps",
    "perc",
)

DEFAULT_ALPHA = 7
DEFAULT_HORIZON = 3


def generate_hybrid_features(
    series: ForcingSeries,
    x1: float,
    s0_frac: float = gr4j.S0_FRACTION,
) -> np.ndarray:
    """Build the (n_days, 9) hybrid feature matrix for a series.

    The production store runs forward from ``s0_frac * x1`` over the whole
    series; routing plays no part here, so only x1 is needed.  Column
    order follows :data:`FEATURE_NAMES`.
    """
    if not series.is_dense():
        raise ValueError("series must be imputed before feature generation")
    n = len(series)
    rows = np.empty((n, len(FEATURE_NAMES)))
    rows[:, 0] = series.precip
    rows[:, 1] = series.evap
    rows[:, 2] = series.tmin
    rows[:, 3] = series.tmax
    rows[:, 4] = series.vprp

    s = s0_frac * x1
    for i in range(n):
        fluxes, s = gr4j.production_step(s, series.precip[i], series.evap[i], x1)
        rows[i, 5] = fluxes.pn
        rows[i, 6] = fluxes.en
        rows[i, 7] = fluxes.ps
        rows[i, 8] = fluxes.perc
    return rows


@dataclass
class WindowedDataset:
    """Normalized model inputs/targets plus everything needed to undo them.

    Attributes
    ----------
    inputs : ndarray, shape (m, alpha, 9)
    targets : ndarray, shape (m, horizon)
        Normalized streamflow for the days following each window.
    origin_dates : ndarray of datetime64[D], shape (m,)
        Date of the last input day of each window; lead day 1 is the next
        calendar day.
    feature_normalizer, target_normalizer : Normalizer
    """

    inputs: np.ndarray
    targets: np.ndarray
    origin_dates: np.ndarray
    feature_normalizer: Normalizer
    target_normalizer: Normalizer
    alpha: int
    horizon: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.origin_dates = np.asarray(self.origin_dates, dtype="datetime64[D]")
        m = self.inputs.shape[0]
        expected_in = (m, self.alpha, len(FEATURE_NAMES))
        expected_out = (m, self.horizon)
        if self.inputs.shape != expected_in:
            raise ValueError(f"inputs shape {self.inputs.shape}, expected {expected_in}")
        if self.targets.shape != expected_out:
            raise ValueError(f"targets shape {self.targets.shape}, expected {expected_out}")
        if self.origin_dates.shape != (m,):
            raise ValueError("one origin date per window required")

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def denormalized_targets(self) -> np.ndarray:
        return self.target_normalizer.inverse(self.targets)

    def save(self, path: str | Path) -> None:
        """Persist as NPZ with an explicit (m, alpha, width, horizon) header."""
        np.savez_compressed(
            path,
            shape_header=np.array(
                [len(self), self.alpha, len(FEATURE_NAMES), self.horizon], dtype=np.int64
            ),
            inputs=self.inputs,
            targets=self.targets,
            origin_dates=self.origin_dates.astype(np.int64),
            feature_names=np.array(self.feature_normalizer.names),
            feature_mean=self.feature_normalizer.mean,
            feature_std=self.feature_normalizer.std,
            target_names=np.array(self.target_normalizer.names),
            target_mean=self.target_normalizer.mean,
            target_std=self.target_normalizer.std,
        )

    @classmethod
    def load(cls, path: str | Path) -> "WindowedDataset":
        with np.load(path, allow_pickle=False) as z:
            m, alpha, width, horizon = (int(v) for v in z["shape_header"])
            if width != len(FEATURE_NAMES):
                raise ValueError(f"dataset has {width} features, expected {len(FEATURE_NAMES)}")
            feature_norm = Normalizer(
                names=tuple(str(n) for n in z["feature_names"]),
                mean=z["feature_mean"],
                std=z["feature_std"],
            )
            target_norm = Normalizer(
                names=tuple(str(n) for n in z["target_names"]),
                mean=z["target_mean"],
                std=z["target_std"],
            )
            return cls(
                inputs=z["inputs"],
                targets=z["targets"],
                origin_dates=z["origin_dates"].astype("datetime64[D]"),
                feature_normalizer=feature_norm,
                target_normalizer=target_norm,
                alpha=alpha,
                horizon=horizon,
            )


def fit_feature_normalizer(rows: np.ndarray) -> Normalizer:
    return Normalizer.fit(rows, FEATURE_NAMES)


def fit_target_normalizer(flow: np.ndarray) -> Normalizer:
    return Normalizer.fit(np.asarray(flow, dtype=np.float64)[:, None], ("streamflow",))


def make_windows(
    rows: np.ndarray,
    flow: np.ndarray,
    dates: np.ndarray,
    feature_normalizer: Normalizer,
    target_normalizer: Normalizer,
    alpha: int = DEFAULT_ALPHA,
    horizon: int = DEFAULT_HORIZON,
) -> WindowedDataset:
    """Slice normalized sliding windows out of aligned daily arrays.

    Window ``m`` (0-based) holds feature rows ``m .. m + alpha - 1`` and
    targets the flows of days ``m + alpha .. m + alpha + horizon - 1``.

    Raises
    ------
    ValueError
        If fewer than ``alpha + horizon`` days are supplied, or shapes
        disagree.
    """
    if alpha < 1 or horizon < 1:
        raise ValueError("alpha and horizon must be >= 1")
    rows = np.asarray(rows, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    dates = np.asarray(dates, dtype="datetime64[D]")
    n = rows.shape[0]
    if rows.ndim != 2 or rows.shape[1] != len(FEATURE_NAMES):
        raise ValueError(f"rows must be (n, {len(FEATURE_NAMES)}), got {rows.shape}")
    if flow.shape != (n,) or dates.shape != (n,):
        raise ValueError("rows, flow and dates must align")
    m = n - alpha - horizon + 1
    if m < 1:
        raise ValueError(
            f"need at least {alpha + horizon} days for alpha={alpha}, "
            f"horizon={horizon}; got {n}"
        )

    norm_rows = feature_normalizer.transform(rows)
    norm_flow = target_normalizer.transform(flow[:, None])[:, 0]

    idx = np.arange(m)
    inputs = np.stack([norm_rows[i : i + alpha] for i in idx])
    targets = np.stack([norm_flow[i + alpha : i + alpha + horizon] for i in idx])
    origin_dates = dates[alpha - 1 : alpha - 1 + m]

    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        origin_dates=origin_dates,
        feature_normalizer=feature_normalizer,
        target_normalizer=target_normalizer,
        alpha=alpha,
        horizon=horizon,
    )


def build_split_datasets(
    train: ForcingSeries,
    test: ForcingSeries,
    x1: float,
    alpha: int = DEFAULT_ALPHA,
    horizon: int = DEFAULT_HORIZON,
    warmup_days: int = gr4j.WARMUP_DAYS,
) -> tuple[WindowedDataset, WindowedDataset]:
    """Window both splits of a station with train-fitted normalizers.

    The production store runs continuously across the split boundary so
    test features carry no restart transient, and the first ``warmup_days``
    of the training split are dropped before fitting normalizers or
    cutting windows (store spin-up).  Nothing from the test split touches
    the fitted statistics.
    """
    if len(train) <= warmup_days + alpha + horizon:
        raise ValueError(
            f"training split of {len(train)} days cannot cover "
            f"{warmup_days} warm-up days plus one window"
        )
    n_train = len(train)
    # Run the store across the full record in one pass, then slice.
    full = _concat_series(train, test)
    rows = generate_hybrid_features(full, x1)

    train_rows = rows[warmup_days:n_train]
    train_flow = full.streamflow[warmup_days:n_train]
    train_dates = full.dates[warmup_days:n_train]
    test_rows = rows[n_train:]
    test_flow = full.streamflow[n_train:]
    test_dates = full.dates[n_train:]

    feature_norm = fit_feature_normalizer(train_rows)
    target_norm = fit_target_normalizer(train_flow)

    train_ds = make_windows(
        train_rows, train_flow, train_dates, feature_norm, target_norm, alpha, horizon
    )
    test_ds = make_windows(
        test_rows, test_flow, test_dates, feature_norm, target_norm, alpha, horizon
    )
    logger.info(
        "station %s: %d train windows, %d test windows (alpha=%d, horizon=%d)",
        train.station_id, len(train_ds), len(test_ds), alpha, horizon,
    )
    return train_ds, test_ds


def _concat_series(a: ForcingSeries, b: ForcingSeries) -> ForcingSeries:
    if len(b) == 0:
        return a
    from .ingest import VARIABLES  # local import to keep module load light

    return ForcingSeries(
        station_id=a.station_id,
        dates=np.concatenate([a.dates, b.dates]),
        **{v: np.concatenate([a.variable(v), b.variable(v)]) for v in VARIABLES},
    )
