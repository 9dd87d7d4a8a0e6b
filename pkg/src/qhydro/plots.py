"""Report figures for pipeline outputs.

Every function renders straight to a file with the Agg backend, so the
pipeline can run headless.  Figures sit next to the delimited reports
they illustrate.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.dates as mdates
import matplotlib.pyplot as plt
import numpy as np

from .ensemble import QuantileForecast
from .extremes import FloodRiskLevel

FIG_DPI = 120

_RISK_COLORS = {
    FloodRiskLevel.UNLIKELY: "#bdbdbd",
    FloodRiskLevel.LOW: "#ffd54f",
    FloodRiskLevel.MODERATE: "#ff9800",
    FloodRiskLevel.HIGH: "#d32f2f",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_forecast_intervals(
    forecast: QuantileForecast,
    observed: np.ndarray | None,
    path: str | Path,
    station_id: str = "",
) -> Path:
    """Observed flow, median forecast and 90% band, one panel per lead day."""
    horizon = forecast.horizon
    fig, axes = plt.subplots(
        horizon, 1, figsize=(10, 2.6 * horizon), sharex=True, squeeze=False
    )
    dates = forecast.origin_dates.astype("datetime64[D]").astype("O")
    for lead in range(horizon):
        ax = axes[lead, 0]
        ax.fill_between(
            dates,
            forecast.lower[:, lead],
            forecast.upper[:, lead],
            color="#90caf9",
            alpha=0.6,
            label="q05-q95",
        )
        ax.plot(dates, forecast.median[:, lead], color="#1565c0", lw=0.9, label="q50")
        if observed is not None:
            ax.plot(dates, observed[:, lead], color="black", lw=0.7, label="observed")
        ax.set_ylabel(f"lead {lead + 1}\nflow (mm/d)")
        if lead == 0:
            ax.legend(loc="upper right", fontsize=8, ncol=3)
    axes[-1, 0].xaxis.set_major_formatter(mdates.DateFormatter("%Y-%m"))
    title = "Quantile forecast"
    if station_id:
        title += f" - {station_id}"
    axes[0, 0].set_title(title)
    fig.autofmt_xdate()
    return _save(fig, path)


def plot_calibration_trace(trace: list[float], path: str | Path, station_id: str = "") -> Path:
    """Best NSE per generation of the evolutionary search."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(range(len(trace)), trace, color="#2e7d32")
    ax.set_xlabel("generation")
    ax.set_ylabel("best NSE")
    title = "Calibration convergence"
    if station_id:
        title += f" - {station_id}"
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_training_losses(
    traces: dict[float, list[float]], path: str | Path, station_id: str = ""
) -> Path:
    """Per-member pinball loss by epoch."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for tau, trace in sorted(traces.items()):
        ax.plot(range(1, len(trace) + 1), trace, label=f"tau={tau:.2f}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("tilted loss")
    ax.set_yscale("log")
    title = "Quantile member training"
    if station_id:
        title += f" - {station_id}"
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_flood_risk(
    forecast: QuantileForecast,
    observed_peak: np.ndarray,
    gamma: float,
    levels: list[FloodRiskLevel],
    k_years: float,
    path: str | Path,
    station_id: str = "",
) -> Path:
    """Window peaks against the flood threshold, colored by risk level."""
    dates = forecast.origin_dates.astype("datetime64[D]").astype("O")
    peaks = forecast.upper.max(axis=1)
    colors = [_RISK_COLORS[level] for level in levels]
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.scatter(dates, peaks, c=colors, s=12, label="forecast peak (q95)", zorder=3)
    ax.plot(dates, observed_peak, color="black", lw=0.7, label="observed peak")
    ax.axhline(gamma, color="#d32f2f", ls="--", lw=1.2, label=f"{k_years:g}-year threshold")
    ax.set_ylabel("window peak flow (mm/d)")
    title = "Flood risk"
    if station_id:
        title += f" - {station_id}"
    ax.set_title(title)
    ax.legend(fontsize=8)
    handles = [
        plt.Line2D([], [], marker="o", ls="", color=_RISK_COLORS[level], label=level.label)
        for level in FloodRiskLevel
    ]
    ax.legend(handles=ax.get_legend_handles_labels()[0] + handles, fontsize=8, ncol=2)
    fig.autofmt_xdate()
    return _save(fig, path)
