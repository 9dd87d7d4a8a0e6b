"""Quantile ensembles: one model per quantile level, joint interval output.

Three members are trained at tau = 0.05, 0.50 and 0.95 on the same
windows, differing only in loss level and weight seed.  Prediction
denormalizes each member's output, re-sorts the three values per cell so
the interval is ordered (counting how often the raw members crossed), and
clamps negative flows to zero (counting those too).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import WindowedDataset
from .ingest import Normalizer
from .neural import (
    Model,
    ModelSpec,
    TrainConfig,
    TrainResult,
    load_model,
    save_model,
    train_quantile_model,
)

logger = logging.getLogger(__name__)

TAUS = (0.05, 0.50, 0.95)
QUANTILE_COLUMNS = ("q05", "q50", "q95")


@dataclass
class QuantileForecast:
    """Denormalized interval forecasts.

    ``values`` has shape (m, horizon, 3) with the quantile axis ordered
    (q05, q50, q95) and non-decreasing along it.
    """

    origin_dates: np.ndarray
    values: np.ndarray
    horizon: int
    crossing_count: int
    clamped_count: int

    def __post_init__(self):
        self.origin_dates = np.asarray(self.origin_dates, dtype="datetime64[D]")
        self.values = np.asarray(self.values, dtype=np.float64)
        m = self.origin_dates.size
        if self.values.shape != (m, self.horizon, len(TAUS)):
            raise ValueError(
                f"values shape {self.values.shape}, expected ({m}, {self.horizon}, {len(TAUS)})"
            )
        if np.any(np.diff(self.values, axis=2) < 0.0):
            raise ValueError("quantile axis must be non-decreasing")

    def __len__(self) -> int:
        return int(self.origin_dates.size)

    @property
    def lower(self) -> np.ndarray:
        return self.values[:, :, 0]

    @property
    def median(self) -> np.ndarray:
        return self.values[:, :, 1]

    @property
    def upper(self) -> np.ndarray:
        return self.values[:, :, 2]


@dataclass
class QuantileEnsemble:
    """Trained members keyed by quantile level, plus the target normalizer."""

    members: dict[float, Model]
    target_normalizer: Normalizer
    base_seed: int

    def __post_init__(self):
        if tuple(sorted(self.members)) != TAUS:
            raise ValueError(f"members must cover exactly {TAUS}")
        specs = {tau: m.spec for tau, m in self.members.items()}
        horizons = {s.horizon for s in specs.values()}
        if len(horizons) != 1:
            raise ValueError("members disagree on horizon")

    @property
    def horizon(self) -> int:
        return next(iter(self.members.values())).spec.horizon


def member_seed(base_seed: int, tau_index: int) -> int:
    """Weight seed for the ``tau_index``-th member of an ensemble."""
    return int(base_seed) + tau_index


def train_ensemble(
    data: WindowedDataset,
    spec: ModelSpec,
    config: TrainConfig | None = None,
) -> tuple[QuantileEnsemble, dict[float, TrainResult]]:
    """Train the three quantile members on one windowed dataset.

    ``spec.seed`` acts as the ensemble base seed; member i trains with
    seed ``base + i`` so the members start from different weights.
    """
    if config is None:
        config = TrainConfig()
    members: dict[float, Model] = {}
    results: dict[float, TrainResult] = {}
    for i, tau in enumerate(TAUS):
        member_spec = ModelSpec(
            arch=spec.arch,
            alpha=spec.alpha,
            horizon=spec.horizon,
            width=spec.width,
            layers=spec.layers,
            seed=member_seed(spec.seed, i),
        )
        member_config = TrainConfig(
            epochs=config.epochs,
            batch_size=config.batch_size,
            lr=config.lr,
            beta1=config.beta1,
            beta2=config.beta2,
            clip_norm=config.clip_norm,
            val_fraction=config.val_fraction,
            patience=config.patience,
            seed=member_seed(config.seed, i),
        )
        result = train_quantile_model(
            member_spec, data.inputs, data.targets, tau, member_config
        )
        members[tau] = result.model
        results[tau] = result
    ensemble = QuantileEnsemble(
        members=members,
        target_normalizer=data.target_normalizer,
        base_seed=spec.seed,
    )
    return ensemble, results


def predict_intervals(
    ensemble: QuantileEnsemble,
    inputs: np.ndarray,
    origin_dates: np.ndarray,
) -> QuantileForecast:
    """Predict denormalized quantile intervals for a block of windows.

    Member outputs can cross (each member is fitted independently); the
    three values in each cell are sorted into order and the number of
    crossing cells is reported as a diagnostic, as is the number of cells
    clamped up to zero flow.
    """
    raw = np.stack(
        [ensemble.members[tau].forward_tensor(inputs).data for tau in TAUS], axis=2
    )
    crossing = int(np.sum(np.any(np.diff(raw, axis=2) < 0.0, axis=2)))
    denorm = ensemble.target_normalizer.inverse(raw)
    ordered = np.sort(denorm, axis=2)
    clamped = int(np.sum(ordered < 0.0))
    ordered = np.clip(ordered, 0.0, None)
    if crossing:
        logger.info("%d of %d forecast cells had crossed quantiles", crossing, raw[:, :, 0].size)
    return QuantileForecast(
        origin_dates=origin_dates,
        values=ordered,
        horizon=ensemble.horizon,
        crossing_count=crossing,
        clamped_count=clamped,
    )


def forecast_dataset(ensemble: QuantileEnsemble, data: WindowedDataset) -> QuantileForecast:
    return predict_intervals(ensemble, data.inputs, data.origin_dates)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_ensemble(directory: str | Path, ensemble: QuantileEnsemble, meta: dict | None = None) -> None:
    """Write one NPZ per member plus an index JSON into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    member_files = {}
    for tau, column in zip(TAUS, QUANTILE_COLUMNS):
        filename = f"member_{column}.npz"
        save_model(directory / filename, ensemble.members[tau], meta={"tau": tau})
        member_files[column] = filename
    index = {
        "members": member_files,
        "taus": list(TAUS),
        "base_seed": ensemble.base_seed,
        "target_normalizer": ensemble.target_normalizer.to_dict(),
        "meta": meta or {},
    }
    (directory / "ensemble.json").write_text(json.dumps(index, indent=2) + "\n")


def load_ensemble(directory: str | Path) -> QuantileEnsemble:
    directory = Path(directory)
    index = json.loads((directory / "ensemble.json").read_text())
    members = {}
    for tau, column in zip(TAUS, QUANTILE_COLUMNS):
        model, _ = load_model(directory / index["members"][column])
        members[tau] = model
    return QuantileEnsemble(
        members=members,
        target_normalizer=Normalizer.from_dict(index["target_normalizer"]),
        base_seed=int(index["base_seed"]),
    )


def write_forecast_csv(path: str | Path, forecast: QuantileForecast) -> None:
    """Long-format CSV: one row per origin date and lead day."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["origin_date", "lead_day", *QUANTILE_COLUMNS])
        for i in range(len(forecast)):
            for lead in range(forecast.horizon):
                q05, q50, q95 = forecast.values[i, lead]
                writer.writerow(
                    [
                        str(forecast.origin_dates[i]),
                        lead + 1,
                        f"{q05:.6f}",
                        f"{q50:.6f}",
                        f"{q95:.6f}",
                    ]
                )


def read_forecast_csv(path: str | Path) -> QuantileForecast:
    """Inverse of :func:`write_forecast_csv`."""
    rows: dict[str, dict[int, tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ("origin_date", "lead_day", *QUANTILE_COLUMNS)
        if tuple(reader.fieldnames or ()) != expected:
            raise ValueError(f"bad forecast header {reader.fieldnames}, expected {list(expected)}")
        for row in reader:
            day = rows.setdefault(row["origin_date"], {})
            day[int(row["lead_day"])] = (
                float(row["q05"]), float(row["q50"]), float(row["q95"])
            )
    if not rows:
        raise ValueError(f"{path}: empty forecast")
    origins = sorted(rows)
    horizon = max(max(leads) for leads in rows.values())
    values = np.empty((len(origins), horizon, len(TAUS)))
    for i, origin in enumerate(origins):
        leads = rows[origin]
        if sorted(leads) != list(range(1, horizon + 1)):
            raise ValueError(f"origin {origin}: lead days incomplete")
        for lead in range(1, horizon + 1):
            values[i, lead - 1] = leads[lead]
    return QuantileForecast(
        origin_dates=np.array(origins, dtype="datetime64[D]"),
        values=values,
        horizon=horizon,
        crossing_count=0,
        clamped_count=0,
    )
