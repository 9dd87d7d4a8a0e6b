"""Forecast skill metrics.

All metrics operate on denormalized values in physical units.  Arrays may
be any matching shape; multi-step forecasts of shape (windows, horizon)
are pooled over every element.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Central interval with 5% tails on each side.
DEFAULT_INTERVAL_ALPHA = 0.1


def _paired(pred, obs) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {obs.shape}")
    if pred.size == 0:
        raise ValueError("empty arrays")
    return pred, obs


def rmse(pred, obs) -> float:
    """Root mean squared error pooled over all elements."""
    pred, obs = _paired(pred, obs)
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def nse(pred, obs) -> float:
    """Nash-Sutcliffe efficiency, 1 - SSE / SS about the observed mean.

    Equals 1 for a perfect forecast, 0 when no better than the mean of the
    observations (pooled over all elements).  Constant observations leave
    the score undefined and raise ValueError.
    """
    pred, obs = _paired(pred, obs)
    denom = float(np.sum((obs - obs.mean()) ** 2))
    if denom == 0.0:
        raise ValueError("nse undefined: observations are constant")
    return float(1.0 - np.sum((pred - obs) ** 2) / denom)


def interval_score(lower, upper, obs, alpha: float = DEFAULT_INTERVAL_ALPHA) -> float:
    """Mean interval score of a central (1 - alpha) prediction interval.

    Per element: width (upper - lower), plus (2 / alpha) times the miss
    distance whenever the observation falls outside the interval.  Lower
    is better; widening an interval that already covers the observation
    strictly increases the score.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if not lower.shape == upper.shape == obs.shape:
        raise ValueError("lower, upper and obs must have identical shapes")
    if lower.size == 0:
        raise ValueError("empty arrays")
    if np.any(upper < lower):
        raise ValueError("upper bound below lower bound")
    width = upper - lower
    below = np.clip(lower - obs, 0.0, None)
    above = np.clip(obs - upper, 0.0, None)
    return float(np.mean(width + (2.0 / alpha) * (below + above)))


@dataclass(frozen=True)
class MetricReport:
    """Skill summary for one station and split."""

    station_id: str
    split: str
    rmse: float
    nse: float
    interval_score: float
    n_windows: int
    horizon: int

    def to_dict(self) -> dict:
        return {
            "station_id": self.station_id,
            "split": self.split,
            "rmse": self.rmse,
            "nse": self.nse,
            "interval_score": self.interval_score,
            "m": self.n_windows,
            "t": self.horizon,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        d = json.loads(Path(path).read_text())
        return cls(
            station_id=d["station_id"],
            split=d["split"],
            rmse=d["rmse"],
            nse=d["nse"],
            interval_score=d["interval_score"],
            n_windows=d["m"],
            horizon=d["t"],
        )


def evaluate_forecast(
    station_id: str,
    split: str,
    median: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    obs: np.ndarray,
    alpha: float = DEFAULT_INTERVAL_ALPHA,
) -> MetricReport:
    """Score a (windows, horizon) quantile forecast against observations."""
    median = np.atleast_2d(np.asarray(median, dtype=np.float64))
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    return MetricReport(
        station_id=station_id,
        split=split,
        rmse=rmse(median, obs),
        nse=nse(median, obs),
        interval_score=interval_score(lower, upper, obs, alpha=alpha),
        n_windows=int(obs.shape[0]),
        horizon=int(obs.shape[1]),
    )
