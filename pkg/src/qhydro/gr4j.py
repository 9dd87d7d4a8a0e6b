"""Daily GR4J rainfall-runoff model.

Standard four-parameter formulation (Perrin et al., 2003): an
interception step splits rainfall and PET into net values, a production
store absorbs part of the net rainfall and loses water to actual
evapotranspiration and percolation, and the resulting effective rainfall
is routed through two unit hydrographs (90/10 split), a nonlinear routing
store and a groundwater exchange term.

Parameters
----------
x1 : production store capacity (mm), > 0
x2 : groundwater exchange coefficient (mm/day), either sign
x3 : routing store capacity (mm), > 0
x4 : unit hydrograph time base (days), >= 0.5

The day-by-day recursion is exposed twice: ``production_step`` /
``routing_step`` operate on explicit state for inspection and feature
generation, while :func:`simulate` runs a compiled kernel over whole
forcing arrays (the calibration loop calls it thousands of times).  Both
paths evaluate identical expressions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

# Fractions of capacity used to initialise the stores, and the spin-up
# period excluded from objectives and training windows.
S0_FRACTION = 0.3
R0_FRACTION = 0.2
WARMUP_DAYS = 365

# Split of effective rainfall between the two unit hydrographs.
UH1_SHARE = 0.9

# Default calibration bounds, generous around published catchment fits.
PARAM_NAMES = ("x1", "x2", "x3", "x4")
DEFAULT_BOUNDS = {
    "x1": (1.0, 2000.0),
    "x2": (-10.0, 10.0),
    "x3": (1.0, 500.0),
    "x4": (0.5, 10.0),
}


@dataclass(frozen=True)
class Gr4jParams:
    """Model parameters.  Validated on construction."""

    x1: float
    x2: float
    x3: float
    x4: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.x1 <= 0.0:
            raise ValueError(f"x1 must be positive, got {self.x1}")
        if self.x3 <= 0.0:
            raise ValueError(f"x3 must be positive, got {self.x3}")
        if self.x4 < 0.5:
            raise ValueError(f"x4 must be >= 0.5, got {self.x4}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "Gr4jParams":
        x1, x2, x3, x4 = (float(v) for v in values)
        return cls(x1=x1, x2=x2, x3=x3, x4=x4)

    def to_dict(self) -> dict:
        return {name: float(getattr(self, name)) for name in PARAM_NAMES}


@dataclass
class Gr4jState:
    """Mutable model state between days.

    ``uh1`` and ``uh2`` hold water already committed to future days; entry
    0 is released on the next step.  Lengths are ``ceil(x4)`` and
    ``ceil(2 * x4)`` respectively.
    """

    s: float
    r: float
    uh1: np.ndarray
    uh2: np.ndarray

    def copy(self) -> "Gr4jState":
        return Gr4jState(s=self.s, r=self.r, uh1=self.uh1.copy(), uh2=self.uh2.copy())


@dataclass(frozen=True)
class ProductionFluxes:
    """Per-day production store fluxes (all mm/day)."""

    pn: float
    en: float
    ps: float
    es: float
    perc: float


def unit_hydrograph_ordinates(x4: float) -> tuple[np.ndarray, np.ndarray]:
    """Discrete unit hydrograph ordinates for UH1 and UH2.

    UH1 spreads water over ``ceil(x4)`` days with S-curve
    ``SH1(t) = (t / x4) ** 2.5`` (clamped to [0, 1]); UH2 spreads over
    ``ceil(2 * x4)`` days with the symmetric two-piece curve

        SH2(t) = 0.5 * (t / x4) ** 2.5                 for t <= x4
        SH2(t) = 1 - 0.5 * (2 - t / x4) ** 2.5         for x4 < t < 2 * x4
        SH2(t) = 1                                     otherwise

    Ordinates are successive differences of the S-curves, so each set is
    non-negative and sums to one.
    """
    if x4 < 0.5:
        raise ValueError(f"x4 must be >= 0.5, got {x4}")
    n1 = int(math.ceil(x4))
    n2 = int(math.ceil(2.0 * x4))

    def sh1(t: float) -> float:
        if t <= 0.0:
            return 0.0
        if t >= x4:
            return 1.0
        return (t / x4) ** 2.5

    def sh2(t: float) -> float:
        if t <= 0.0:
            return 0.0
        if t <= x4:
            return 0.5 * (t / x4) ** 2.5
        if t < 2.0 * x4:
            return 1.0 - 0.5 * (2.0 - t / x4) ** 2.5
        return 1.0

    ord1 = np.array([sh1(t + 1.0) - sh1(float(t)) for t in range(n1)])
    ord2 = np.array([sh2(t + 1.0) - sh2(float(t)) for t in range(n2)])
    return ord1, ord2


def initial_state(
    params: Gr4jParams,
    s0_frac: float = S0_FRACTION,
    r0_frac: float = R0_FRACTION,
) -> Gr4jState:
    """State at the start of a run: part-filled stores, empty hydrographs."""
    if not 0.0 <= s0_frac <= 1.0:
        raise ValueError(f"s0_frac must be in [0, 1], got {s0_frac}")
    if not 0.0 <= r0_frac <= 1.0:
        raise ValueError(f"r0_frac must be in [0, 1], got {r0_frac}")
    ord1, ord2 = unit_hydrograph_ordinates(params.x4)
    return Gr4jState(
        s=s0_frac * params.x1,
        r=r0_frac * params.x3,
        uh1=np.zeros(ord1.size),
        uh2=np.zeros(ord2.size),
    )


def production_step(
    s_prev: float, p: float, e: float, x1: float
) -> tuple[ProductionFluxes, float]:
    """Advance the production store by one day.

    Interception nets rainfall against PET, the store takes up ``ps`` of
    the net rainfall (or loses ``es`` to evaporation), then percolates.

    Returns
    -------
    (ProductionFluxes, float)
        The day's fluxes and the store level after percolation.  The level
        stays within [0, x1] for any admissible input.
    """
    if x1 <= 0.0:
        raise ValueError(f"x1 must be positive, got {x1}")
    if not (np.isfinite(p) and np.isfinite(e) and np.isfinite(s_prev)):
        raise ValueError("production_step inputs must be finite")
    if p < 0.0 or e < 0.0:
        raise ValueError("precipitation and PET must be non-negative")
    if not 0.0 <= s_prev <= x1:
        raise ValueError(f"store level {s_prev} outside [0, {x1}]")

    s = s_prev
    if p >= e:
        pn = p - e
        en = 0.0
        phi = math.tanh(pn / x1)
        ps = x1 * (1.0 - (s / x1) ** 2) * phi / (1.0 + (s / x1) * phi)
        es = 0.0
    else:
        pn = 0.0
        en = e - p
        psi = math.tanh(en / x1)
        es = s * (2.0 - s / x1) * psi / (1.0 + (1.0 - s / x1) * psi)
        ps = 0.0

    s = s + ps - es
    # Closed-form bounds hold exactly; the clamps only absorb rounding.
    if s > x1:
        s = x1
    elif s < 0.0:
        s = 0.0

    perc = s * (1.0 - (1.0 + ((4.0 / 9.0) * s / x1) ** 4) ** (-0.25))
    s = s - perc
    if s < 0.0:
        s = 0.0

    return ProductionFluxes(pn=pn, en=en, ps=ps, es=es, perc=perc), s


def routing_step(
    state: Gr4jState, pr: float, params: Gr4jParams
) -> tuple[float, Gr4jState]:
    """Route one day of effective rainfall through the hydrographs and store.

    ``pr`` (mm/day) is split 90/10 between UH1 and UH2.  Each hydrograph
    receives the day's water across its ordinates, releases its head entry
    and shifts.  The UH1 output passes through the nonlinear routing store
    (with groundwater exchange ``f = x2 * (r / x3) ** 3.5`` computed on the
    pre-update level); the UH2 output plus exchange forms the direct branch.

    Returns the day's streamflow (mm/day) and the new state.
    """
    if pr < 0.0 or not np.isfinite(pr):
        raise ValueError(f"effective rainfall must be finite and non-negative, got {pr}")
    new = state.copy()
    new.uh1 += _uh1_ordinates(params) * (UH1_SHARE * pr)
    new.uh2 += _uh2_ordinates(params) * ((1.0 - UH1_SHARE) * pr)

    q9 = new.uh1[0]
    q1 = new.uh2[0]
    new.uh1[:-1] = new.uh1[1:]
    new.uh1[-1] = 0.0
    new.uh2[:-1] = new.uh2[1:]
    new.uh2[-1] = 0.0

    f = params.x2 * (new.r / params.x3) ** 3.5
    r = new.r + q9 + f
    if r < 0.0:
        r = 0.0
    qr = r * (1.0 - (1.0 + (r / params.x3) ** 4) ** (-0.25))
    new.r = r - qr

    qd = q1 + f
    if qd < 0.0:
        qd = 0.0
    return qr + qd, new


# Ordinates depend only on x4; memoise per parameter value since the step
# functions are called in tight loops during feature generation.
_ORDINATE_CACHE: dict[float, tuple[np.ndarray, np.ndarray]] = {}


def _ordinates_cached(x4: float) -> tuple[np.ndarray, np.ndarray]:
    hit = _ORDINATE_CACHE.get(x4)
    if hit is None:
        hit = unit_hydrograph_ordinates(x4)
        if len(_ORDINATE_CACHE) > 256:
            _ORDINATE_CACHE.clear()
        _ORDINATE_CACHE[x4] = hit
    return hit


def _uh1_ordinates(params: Gr4jParams) -> np.ndarray:
    return _ordinates_cached(params.x4)[0]


def _uh2_ordinates(params: Gr4jParams) -> np.ndarray:
    return _ordinates_cached(params.x4)[1]


@dataclass
class Simulation:
    """Day-by-day output of :func:`simulate`.

    All arrays cover every input day.  Entries before ``warmup_days`` are
    store spin-up; objectives and training windows must skip them.
    """

    q: np.ndarray
    s: np.ndarray
    r: np.ndarray
    pn: np.ndarray
    en: np.ndarray
    ps: np.ndarray
    es: np.ndarray
    perc: np.ndarray
    pr: np.ndarray
    warmup_days: int

    @property
    def q_eval(self) -> np.ndarray:
        """Streamflow with the spin-up period removed."""
        return self.q[self.warmup_days:]


@njit(cache=True)
def _simulate_kernel(precip, evap, x1, x2, x3, x4, s0, r0, ord1, ord2):  # pragma: no cover
    n = precip.size
    n1 = ord1.size
    n2 = ord2.size
    buf1 = np.zeros(n1)
    buf2 = np.zeros(n2)
    q = np.empty(n)
    s_out = np.empty(n)
    r_out = np.empty(n)
    pn_out = np.empty(n)
    en_out = np.empty(n)
    ps_out = np.empty(n)
    es_out = np.empty(n)
    perc_out = np.empty(n)
    pr_out = np.empty(n)

    s = s0
    r = r0
    for t in range(n):
        p = precip[t]
        e = evap[t]
        if p >= e:
            pn = p - e
            en = 0.0
            phi = math.tanh(pn / x1)
            ps = x1 * (1.0 - (s / x1) ** 2) * phi / (1.0 + (s / x1) * phi)
            es = 0.0
        else:
            pn = 0.0
            en = e - p
            psi = math.tanh(en / x1)
            es = s * (2.0 - s / x1) * psi / (1.0 + (1.0 - s / x1) * psi)
            ps = 0.0

        s = s + ps - es
        if s > x1:
            s = x1
        elif s < 0.0:
            s = 0.0
        perc = s * (1.0 - (1.0 + ((4.0 / 9.0) * s / x1) ** 4) ** (-0.25))
        s = s - perc
        if s < 0.0:
            s = 0.0

        pr = perc + (pn - ps)

        for j in range(n1):
            buf1[j] += ord1[j] * (0.9 * pr)
        for j in range(n2):
            buf2[j] += ord2[j] * (0.1 * pr)
        q9 = buf1[0]
        q1 = buf2[0]
        for j in range(n1 - 1):
            buf1[j] = buf1[j + 1]
        buf1[n1 - 1] = 0.0
        for j in range(n2 - 1):
            buf2[j] = buf2[j + 1]
        buf2[n2 - 1] = 0.0

        f = x2 * (r / x3) ** 3.5
        r2 = r + q9 + f
        if r2 < 0.0:
            r2 = 0.0
        qr = r2 * (1.0 - (1.0 + (r2 / x3) ** 4) ** (-0.25))
        r = r2 - qr
        qd = q1 + f
        if qd < 0.0:
            qd = 0.0

        q[t] = qr + qd
        s_out[t] = s
        r_out[t] = r
        pn_out[t] = pn
        en_out[t] = en
        ps_out[t] = ps
        es_out[t] = es
        perc_out[t] = perc
        pr_out[t] = pr

    return q, s_out, r_out, pn_out, en_out, ps_out, es_out, perc_out, pr_out


def simulate(
    params: Gr4jParams,
    precip: np.ndarray,
    evap: np.ndarray,
    init: Gr4jState | None = None,
    warmup_days: int = WARMUP_DAYS,
) -> Simulation:
    """Run GR4J over daily forcing arrays.

    Parameters
    ----------
    params : Gr4jParams
    precip, evap : ndarray
        Gap-free daily precipitation and PET (mm/day), equal length.
    init : Gr4jState, optional
        Defaults to :func:`initial_state` (30% full production store, 20%
        full routing store, empty hydrograph buffers).
    warmup_days : int
        Spin-up length recorded on the result; must be shorter than the
        forcing.  The returned arrays still cover every day.

    Returns
    -------
    Simulation
        Streamflow, store levels and production fluxes per day.  The run
        is deterministic: identical inputs give bit-identical outputs.
    """
    precip = np.ascontiguousarray(precip, dtype=np.float64)
    evap = np.ascontiguousarray(evap, dtype=np.float64)
    if precip.ndim != 1 or precip.shape != evap.shape:
        raise ValueError("precip and evap must be 1-D arrays of equal length")
    if precip.size == 0:
        raise ValueError("empty forcing")
    if not (np.all(np.isfinite(precip)) and np.all(np.isfinite(evap))):
        raise ValueError("forcing must be gap-free and finite")
    if np.any(precip < 0.0) or np.any(evap < 0.0):
        raise ValueError("forcing must be non-negative")
    if not 0 <= warmup_days < precip.size:
        raise ValueError(
            f"warmup_days must be in [0, {precip.size - 1}], got {warmup_days}"
        )

    if init is None:
        init = initial_state(params)
    ord1, ord2 = unit_hydrograph_ordinates(params.x4)
    if init.uh1.size != ord1.size or init.uh2.size != ord2.size:
        raise ValueError("initial state hydrograph buffers do not match x4")

    out = _simulate_kernel(
        precip, evap,
        params.x1, params.x2, params.x3, params.x4,
        float(init.s), float(init.r),
        ord1, ord2,
    )
    return Simulation(*out, warmup_days=warmup_days)


def save_settings(
    path: str | Path,
    params: Gr4jParams,
    s0_frac: float = S0_FRACTION,
    r0_frac: float = R0_FRACTION,
    warmup_days: int = WARMUP_DAYS,
) -> None:
    """Persist parameters with the run conventions they were fitted under."""
    payload = params.to_dict()
    payload.update(s0_frac=s0_frac, r0_frac=r0_frac, warmup_days=warmup_days)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_settings(path: str | Path) -> tuple[Gr4jParams, float, float, int]:
    payload = json.loads(Path(path).read_text())
    params = Gr4jParams(**{k: payload[k] for k in PARAM_NAMES})
    return (
        params,
        float(payload["s0_frac"]),
        float(payload["r0_frac"]),
        int(payload["warmup_days"]),
    )
