"""Flood frequency analysis and forecast-based flood risk.

Annual maximum flows are fitted with a generalized extreme value (GEV)
distribution.  The shape parameter ``zeta`` follows the hydrological
(Hosking) sign convention used throughout: the standardized support term
is ``1 - zeta * (x - mu) / sigma``, so positive ``zeta`` gives an upper-
bounded distribution and ``zeta = 0`` is Gumbel.  (This matches scipy's
``genextreme`` shape ``c``; texts that write the support as
``1 + xi * u`` use the opposite sign.)

Fitting maximizes the log-likelihood with a Nelder-Mead simplex started
from L-moment estimates.  A k-year flood threshold is the GEV quantile at
annual non-exceedance probability ``1 - 1/k``.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import gamma as gamma_fn

logger = logging.getLogger(__name__)

MIN_QUALIFYING_YEARS = 5
MIN_DAYS_PER_YEAR = 300

# Shape values this close to zero are treated as Gumbel.
_GUMBEL_EPS = 1e-9

# Likelihood wall for the shape parameter.  For zeta >= 1 the GEV
# likelihood of a small sample is unbounded (the upper endpoint can slide
# onto the sample maximum), so a simplex search drifts forever instead of
# converging; shapes of that size are also far outside anything plausible
# for annual streamflow maxima.
MAX_SHAPE = 0.9

_EULER_GAMMA = 0.5772156649015329

DEFAULT_RECURRENCE_YEARS = (3, 5, 7, 10)


class FitError(RuntimeError):
    """GEV fit failed; carries the L-moment initializer for inspection."""

    def __init__(self, message: str, initial: "GevParams | None" = None):
        self.initial = initial
        super().__init__(message)


@dataclass(frozen=True)
class GevParams:
    """GEV parameters: shape ``zeta``, location ``mu``, scale ``sigma``."""

    zeta: float
    mu: float
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.zeta) and np.isfinite(self.mu) and np.isfinite(self.sigma)):
            raise ValueError("GEV parameters must be finite")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def to_dict(self) -> dict:
        return {"zeta": self.zeta, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class GevFit:
    params: GevParams
    log_likelihood: float
    initial: GevParams
    n_maxima: int

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "log_likelihood": self.log_likelihood,
            "initial": self.initial.to_dict(),
            "n_maxima": self.n_maxima,
        }


def annual_maxima(
    dates: np.ndarray,
    flow: np.ndarray,
    min_days: int = MIN_DAYS_PER_YEAR,
    min_years: int = MIN_QUALIFYING_YEARS,
) -> tuple[np.ndarray, np.ndarray]:
    """Annual maximum flow per sufficiently observed calendar year.

    Years with fewer than ``min_days`` non-missing observations are
    dropped so partial years cannot contribute spuriously low maxima.

    Returns
    -------
    (years, maxima)
        Integer years and their maxima, in chronological order.

    Raises
    ------
    ValueError
        If fewer than ``min_years`` qualifying years remain.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    flow = np.asarray(flow, dtype=np.float64)
    if dates.shape != flow.shape:
        raise ValueError("dates and flow must align")
    ok = np.isfinite(flow)
    years_all = dates.astype("datetime64[Y]").astype(int) + 1970
    years: list[int] = []
    maxima: list[float] = []
    for year in np.unique(years_all):
        mask = (years_all == year) & ok
        if int(mask.sum()) >= min_days:
            years.append(int(year))
            maxima.append(float(flow[mask].max()))
    if len(years) < min_years:
        raise ValueError(
            f"only {len(years)} qualifying years (>= {min_days} observed days); "
            f"need at least {min_years}"
        )
    return np.array(years), np.array(maxima)


# ---------------------------------------------------------------------------
# Distribution functions
# ---------------------------------------------------------------------------

def gev_logpdf(x: np.ndarray, params: GevParams) -> np.ndarray:
    """Elementwise log-density; -inf outside the support."""
    x = np.asarray(x, dtype=np.float64)
    u = (x - params.mu) / params.sigma
    out = np.full(u.shape, -np.inf)
    if abs(params.zeta) < _GUMBEL_EPS:
        out = -np.log(params.sigma) - u - np.exp(-u)
        return out
    arg = 1.0 - params.zeta * u
    inside = arg > 0.0
    # y = ln(1 - zeta*u) / zeta, so (1 - zeta*u)^(1/zeta) = exp(y)
    y = np.log1p(-params.zeta * u[inside]) / params.zeta
    out[inside] = -np.log(params.sigma) + (1.0 - params.zeta) * y - np.exp(y)
    return out


def gev_cdf(x: np.ndarray, params: GevParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    u = (x - params.mu) / params.sigma
    if abs(params.zeta) < _GUMBEL_EPS:
        return np.exp(-np.exp(-u))
    arg = 1.0 - params.zeta * u
    if params.zeta > 0.0:
        # upper bound at mu + sigma/zeta
        cdf = np.where(arg > 0.0, np.exp(-np.maximum(arg, 0.0) ** (1.0 / params.zeta)), 1.0)
    else:
        cdf = np.where(arg > 0.0, np.exp(-np.maximum(arg, 0.0) ** (1.0 / params.zeta)), 0.0)
    return cdf


def gev_quantile(params: GevParams, p: float) -> float:
    """Inverse CDF at non-exceedance probability ``p``.

    Continuous in the shape: as ``zeta -> 0`` the value approaches the
    Gumbel quantile ``mu - sigma * ln(-ln p)``.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if abs(params.zeta) < _GUMBEL_EPS:
        return float(params.mu - params.sigma * math.log(-math.log(p)))
    return float(
        params.mu + params.sigma * (1.0 - (-math.log(p)) ** params.zeta) / params.zeta
    )


def gev_neg_loglik(theta: np.ndarray, values: np.ndarray) -> float:
    """Negative log-likelihood over ``theta = (zeta, mu, log_sigma)``.

    Returns +inf when any observation falls outside the support or the
    shape leaves [-MAX_SHAPE, MAX_SHAPE], which walls the simplex into
    the region where the maximum actually exists.
    """
    zeta, mu, log_sigma = (float(v) for v in theta)
    if not np.all(np.isfinite(theta)) or abs(log_sigma) > 50.0:
        return np.inf
    if abs(zeta) > MAX_SHAPE:
        return np.inf
    params = GevParams(zeta=zeta, mu=mu, sigma=float(np.exp(log_sigma)))
    logpdf = gev_logpdf(values, params)
    if not np.all(np.isfinite(logpdf)):
        return np.inf
    return float(-np.sum(logpdf))


def lmoment_estimates(values: np.ndarray) -> GevParams:
    """Method-of-L-moments GEV estimates (Hosking's rational approximation).

    Used to seed the maximum-likelihood search; also a reasonable fit on
    its own for well-behaved samples.
    """
    values = np.sort(np.asarray(values, dtype=np.float64))
    n = values.size
    if n < 3:
        raise ValueError("need at least 3 values for L-moments")
    j = np.arange(1, n + 1)
    b0 = values.mean()
    b1 = np.sum(values * (j - 1)) / (n * (n - 1))
    b2 = np.sum(values * (j - 1) * (j - 2)) / (n * (n - 1) * (n - 2))
    lam1 = b0
    lam2 = 2.0 * b1 - b0
    lam3 = 6.0 * b2 - 6.0 * b1 + b0
    if lam2 <= 0.0:
        raise ValueError("second L-moment not positive; sample is degenerate")
    t3 = lam3 / lam2

    c = 2.0 / (3.0 + t3) - math.log(2.0) / math.log(3.0)
    k = 7.8590 * c + 2.9554 * c * c
    if abs(k) < _GUMBEL_EPS:
        sigma = lam2 / math.log(2.0)
        mu = lam1 - _EULER_GAMMA * sigma
        return GevParams(zeta=0.0, mu=mu, sigma=sigma)
    g = float(gamma_fn(1.0 + k))
    sigma = lam2 * k / ((1.0 - 2.0 ** (-k)) * g)
    mu = lam1 - sigma * (1.0 - g) / k
    return GevParams(zeta=k, mu=mu, sigma=sigma)


def fit_gev(maxima: np.ndarray) -> GevFit:
    """Maximum-likelihood GEV fit of a sample of annual maxima.

    Nelder-Mead on (zeta, mu, log sigma) from the L-moment start.

    Raises
    ------
    FitError
        If the sample is constant or the simplex fails to converge; the
        error carries the L-moment initializer when one was computable.
    """
    maxima = np.asarray(maxima, dtype=np.float64)
    if maxima.ndim != 1 or maxima.size < 3:
        raise ValueError("need a 1-D sample of at least 3 maxima")
    if not np.all(np.isfinite(maxima)):
        raise ValueError("maxima must be finite")
    if np.ptp(maxima) == 0.0:
        raise FitError("cannot fit a GEV to a constant sample")

    initial = lmoment_estimates(maxima)
    # Very heavy-tailed starts can place points outside the support; pull
    # the shape toward Gumbel until the start is feasible.
    # Start strictly inside the shape wall so the initial simplex has
    # finite likelihood on every vertex.
    zeta0 = float(np.clip(initial.zeta, -0.8, 0.8))
    x0 = np.array([zeta0, initial.mu, math.log(initial.sigma)])
    for _ in range(20):
        if np.isfinite(gev_neg_loglik(x0, maxima)):
            break
        x0[0] *= 0.5
        if abs(x0[0]) < 1e-6:
            x0[0] = 0.0
    if not np.isfinite(gev_neg_loglik(x0, maxima)):
        raise FitError("no feasible starting point for the likelihood", initial)

    result = minimize(
        gev_neg_loglik,
        x0,
        args=(maxima,),
        method="Nelder-Mead",
        options={"maxiter": 5000, "xatol": 1e-8, "fatol": 1e-10},
    )
    if not result.success or not np.isfinite(result.fun):
        raise FitError(f"simplex did not converge: {result.message}", initial)
    zeta, mu, log_sigma = result.x
    params = GevParams(zeta=float(zeta), mu=float(mu), sigma=float(np.exp(log_sigma)))
    fit = GevFit(
        params=params,
        log_likelihood=float(-result.fun),
        initial=initial,
        n_maxima=int(maxima.size),
    )
    logger.info(
        "GEV fit on %d maxima: zeta=%.3f mu=%.3f sigma=%.3f (loglik %.2f)",
        fit.n_maxima, params.zeta, params.mu, params.sigma, fit.log_likelihood,
    )
    return fit


# ---------------------------------------------------------------------------
# Flood thresholds and risk
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FloodThreshold:
    """Flow level exceeded on average once every ``k_years`` years."""

    k_years: float
    probability: float
    gamma: float

    def to_dict(self) -> dict:
        return {"k_years": self.k_years, "probability": self.probability, "gamma": self.gamma}


def flood_threshold(params: GevParams, k_years: float) -> FloodThreshold:
    """k-year return level: the GEV quantile at ``p = 1 - 1/k``."""
    if k_years < 2.0:
        raise ValueError(f"k_years must be >= 2, got {k_years}")
    p = 1.0 - 1.0 / k_years
    return FloodThreshold(k_years=float(k_years), probability=p, gamma=gev_quantile(params, p))


class FloodRiskLevel(enum.IntEnum):
    """Ordered flood risk categories for one forecast window."""

    UNLIKELY = 0
    LOW = 1
    MODERATE = 2
    HIGH = 3

    @property
    def label(self) -> str:
        return {"UNLIKELY": "Unlikely", "LOW": "Low", "MODERATE": "Moderate", "HIGH": "High"}[
            self.name
        ]

    @classmethod
    def from_label(cls, label: str) -> "FloodRiskLevel":
        return cls[label.upper()]


def flood_risk(window_values: np.ndarray, gamma: float) -> FloodRiskLevel:
    """Risk category of one forecast window against a threshold.

    ``window_values`` has shape (horizon, 3) ordered (q05, q50, q95).
    The first matching rule wins:

    * High: the lower quantile exceeds the threshold on some lead day
      (even the optimistic bound floods);
    * Moderate: the median exceeds it;
    * Low: only the upper quantile exceeds it;
    * Unlikely: no quantile exceeds it.

    Raising any quantile can therefore never lower the category.
    """
    window_values = np.asarray(window_values, dtype=np.float64)
    if window_values.ndim != 2 or window_values.shape[1] != 3:
        raise ValueError(f"expected (horizon, 3) values, got {window_values.shape}")
    peak = window_values.max(axis=0)
    if peak[0] > gamma:
        return FloodRiskLevel.HIGH
    if peak[1] > gamma:
        return FloodRiskLevel.MODERATE
    if peak[2] > gamma:
        return FloodRiskLevel.LOW
    return FloodRiskLevel.UNLIKELY


def flood_risk_series(values: np.ndarray, gamma: float) -> list[FloodRiskLevel]:
    """Risk category per origin for a (m, horizon, 3) forecast block."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[2] != 3:
        raise ValueError(f"expected (m, horizon, 3) values, got {values.shape}")
    return [flood_risk(values[i], gamma) for i in range(values.shape[0])]


@dataclass
class FloodEventLabels:
    """Per-origin binary flood labels for one threshold."""

    observed: np.ndarray
    predicted: np.ndarray
    tpr: float | None

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=bool)
        self.predicted = np.asarray(self.predicted, dtype=bool)
        if self.observed.shape != self.predicted.shape:
            raise ValueError("observed and predicted labels must align")


def flood_labels(
    forecast_values: np.ndarray, observed: np.ndarray, gamma: float
) -> FloodEventLabels:
    """Label each origin window as flood / no flood and score detection.

    An observed event means some day of the window's horizon exceeded the
    threshold; a predicted event means some quantile on some lead day did.
    The true positive rate is detected events over observed events, and
    is None (reported as a blank cell) when nothing was observed, rather
    than a misleading 0 or 1.
    """
    forecast_values = np.asarray(forecast_values, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if forecast_values.ndim != 3 or forecast_values.shape[2] != 3:
        raise ValueError(f"expected (m, horizon, 3) forecasts, got {forecast_values.shape}")
    if observed.shape != forecast_values.shape[:2]:
        raise ValueError(
            f"observed shape {observed.shape} does not match forecasts "
            f"{forecast_values.shape[:2]}"
        )
    obs_event = np.any(observed > gamma, axis=1)
    pred_event = np.any(forecast_values > gamma, axis=(1, 2))
    n_obs = int(obs_event.sum())
    if n_obs == 0:
        tpr = None
    else:
        tpr = float(np.sum(obs_event & pred_event) / n_obs)
    return FloodEventLabels(observed=obs_event, predicted=pred_event, tpr=tpr)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def save_gev_fit(path: str | Path, fit: GevFit, years: np.ndarray | None = None) -> None:
    payload = fit.to_dict()
    if years is not None:
        payload["years"] = [int(y) for y in years]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_gev_fit(path: str | Path) -> GevFit:
    d = json.loads(Path(path).read_text())
    return GevFit(
        params=GevParams(**d["params"]),
        log_likelihood=d["log_likelihood"],
        initial=GevParams(**d["initial"]),
        n_maxima=d["n_maxima"],
    )


def write_flood_risk_csv(
    path: str | Path,
    origin_dates: np.ndarray,
    per_threshold: dict[float, tuple[FloodThreshold, list[FloodRiskLevel]]],
) -> None:
    """One row per origin date and recurrence interval."""
    origin_dates = np.asarray(origin_dates, dtype="datetime64[D]")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["origin_date", "k_years", "gamma", "level"])
        for k_years in sorted(per_threshold):
            threshold, levels = per_threshold[k_years]
            if len(levels) != origin_dates.size:
                raise ValueError("one level per origin date required")
            for origin, level in zip(origin_dates, levels):
                writer.writerow(
                    [str(origin), f"{k_years:g}", f"{threshold.gamma:.6f}", level.label]
                )


def write_tpr_csv(path: str | Path, station_id: str, rows: list[tuple[float, float | None]]) -> None:
    """Detection-rate report; an undefined rate is left blank."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "k_years", "tpr"])
        for k_years, tpr in rows:
            writer.writerow([station_id, f"{k_years:g}", "" if tpr is None else f"{tpr:.4f}"])
