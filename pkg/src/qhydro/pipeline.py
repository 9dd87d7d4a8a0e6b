"""End-to-end forecasting pipeline.

Stages, in order: ``ingest`` (clean and split the station record),
``calibrate`` (fit GR4J on the training split), ``train`` (build windows
and fit the quantile ensemble), ``predict`` (interval forecasts for both
splits), ``evaluate`` (skill metrics), ``flood_risk`` (GEV thresholds,
risk categories and detection rates).  Every stage persists its outputs
under ``<out_dir>/stations/<station_id>/``, so stages can be re-run
individually and later stages just read what earlier ones wrote.

Nothing fitted ever sees the test split: calibration, normalizers and
the GEV threshold all come from the training block alone.

JSON artifacts carry the config hash and seed that produced them; the
run manifest records the same stamp for the CSV artifacts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import calibrate as calibrate_mod
from . import extremes, gr4j, metrics
from .ensemble import (
    TAUS,
    forecast_dataset,
    load_ensemble,
    read_forecast_csv,
    save_ensemble,
    train_ensemble,
    write_forecast_csv,
)
from .features import DEFAULT_ALPHA, DEFAULT_HORIZON, WindowedDataset, build_split_datasets
from .ingest import (
    DEFAULT_MAX_MISSING,
    DEFAULT_TRAIN_FRACTION,
    ForcingSeries,
    audit_and_impute,
    chronological_split,
    load_station,
    write_station_csv,
)
from .neural import ModelSpec, TrainConfig, write_trace_csv

logger = logging.getLogger(__name__)

STAGES = ("ingest", "calibrate", "train", "predict", "evaluate", "flood_risk")


class PipelineConfigError(ValueError):
    """Invalid or incomplete configuration; the message names the key."""


class StageError(RuntimeError):
    """A stage failed; partial outputs of that stage have been removed."""

    def __init__(self, stage: str, station_id: str, cause: BaseException):
        self.stage = stage
        self.station_id = station_id
        self.cause = cause
        super().__init__(f"stage {stage!r} failed for station {station_id!r}: {cause}")


@dataclass(frozen=True)
class StationRef:
    station_id: str
    csv: str


@dataclass(frozen=True)
class PipelineConfig:
    stations: tuple[StationRef, ...]
    out_dir: str
    seed: int = 0
    split_fraction: float = DEFAULT_TRAIN_FRACTION
    alpha: int = DEFAULT_ALPHA
    horizon: int = DEFAULT_HORIZON
    warmup_days: int = gr4j.WARMUP_DAYS
    max_missing: float = DEFAULT_MAX_MISSING
    taus: tuple[float, ...] = TAUS
    calibration: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    recurrence_years: tuple[float, ...] = extremes.DEFAULT_RECURRENCE_YEARS
    figures: bool = True

    def __post_init__(self):
        if not self.stations:
            raise PipelineConfigError("config key 'stations' must list at least one station")
        ids = [s.station_id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise PipelineConfigError("config key 'stations' contains duplicate ids")
        if tuple(self.taus) != TAUS:
            raise PipelineConfigError(
                f"config key 'taus' must be {list(TAUS)}; the interval and risk "
                f"semantics depend on exactly these levels"
            )
        if not 0.0 < self.split_fraction < 1.0:
            raise PipelineConfigError("config key 'split_fraction' must be in (0, 1)")
        if self.alpha < 1 or self.horizon < 1:
            raise PipelineConfigError("config keys 'alpha' and 'horizon' must be >= 1")
        if self.warmup_days < 0:
            raise PipelineConfigError("config key 'warmup_days' must be >= 0")
        if any(k < 2 for k in self.recurrence_years):
            raise PipelineConfigError("config key 'recurrence_years' entries must be >= 2")
        # Fail fast on bad nested settings rather than mid-run.
        self.de_config(0)
        self.model_spec(0)
        self.train_config(0)

    # -- nested config builders ----------------------------------------

    def de_config(self, station_seed: int) -> calibrate_mod.DeConfig:
        d = dict(self.calibration)
        bounds = d.pop("bounds", None)
        kwargs = {}
        for key in ("population", "f", "cr", "max_generations", "stall_generations", "stall_tol"):
            if key in d:
                kwargs[key] = d.pop(key)
        if d:
            raise PipelineConfigError(f"unknown calibration keys: {sorted(d)}")
        if bounds is not None:
            try:
                kwargs["bounds"] = tuple(
                    tuple(float(v) for v in bounds[name]) for name in gr4j.PARAM_NAMES
                )
            except (KeyError, TypeError) as exc:
                raise PipelineConfigError(
                    f"calibration bounds must map each of {list(gr4j.PARAM_NAMES)} "
                    f"to [low, high]: {exc}"
                ) from None
        return calibrate_mod.DeConfig(seed=station_seed, **kwargs)

    def model_spec(self, station_seed: int) -> ModelSpec:
        d = dict(self.model)
        arch = d.pop("arch", "lstm_encdec")
        layers = d.pop("layers", None)
        if d:
            raise PipelineConfigError(f"unknown model keys: {sorted(d)}")
        return ModelSpec(
            arch=arch,
            alpha=self.alpha,
            horizon=self.horizon,
            width=9,
            layers=tuple(layers) if layers is not None else None,
            seed=station_seed,
        )

    def train_config(self, station_seed: int) -> TrainConfig:
        d = dict(self.training)
        kwargs = {}
        for key in ("epochs", "batch_size", "lr", "beta1", "beta2",
                    "clip_norm", "val_fraction", "patience"):
            if key in d:
                kwargs[key] = d.pop(key)
        if d:
            raise PipelineConfigError(f"unknown training keys: {sorted(d)}")
        return TrainConfig(seed=station_seed, **kwargs)

    def station_seed(self, station_id: str) -> int:
        """Per-station seed, stable under station ordering and filtering."""
        ordered = sorted(s.station_id for s in self.stations)
        return int(self.seed) + 1000 * ordered.index(station_id)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "stations": [{"id": s.station_id, "csv": s.csv} for s in self.stations],
            "out_dir": self.out_dir,
            "seed": self.seed,
            "split_fraction": self.split_fraction,
            "alpha": self.alpha,
            "horizon": self.horizon,
            "warmup_days": self.warmup_days,
            "max_missing": self.max_missing,
            "taus": list(self.taus),
            "calibration": dict(self.calibration),
            "model": dict(self.model),
            "training": dict(self.training),
            "recurrence_years": list(self.recurrence_years),
            "figures": self.figures,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def default_config_dict() -> dict:
    """Template configuration with every tunable at its shipped default."""
    return {
        "stations": [{"id": "STATION_ID", "csv": "path/to/station.csv"}],
        "out_dir": "runs/example",
        "seed": 0,
        "split_fraction": DEFAULT_TRAIN_FRACTION,
        "alpha": DEFAULT_ALPHA,
        "horizon": DEFAULT_HORIZON,
        "warmup_days": gr4j.WARMUP_DAYS,
        "max_missing": DEFAULT_MAX_MISSING,
        "taus": list(TAUS),
        "calibration": {
            "population": calibrate_mod.DEFAULT_POPULATION,
            "f": calibrate_mod.DEFAULT_F,
            "cr": calibrate_mod.DEFAULT_CR,
            "max_generations": calibrate_mod.DEFAULT_MAX_GENERATIONS,
            "stall_generations": calibrate_mod.DEFAULT_STALL_GENERATIONS,
            "stall_tol": calibrate_mod.DEFAULT_STALL_TOL,
            "bounds": {k: list(v) for k, v in gr4j.DEFAULT_BOUNDS.items()},
        },
        "model": {"arch": "lstm_encdec", "layers": [32]},
        "training": {
            "epochs": 200,
            "batch_size": None,
            "lr": 0.001,
            "beta1": 0.89,
            "beta2": 0.97,
            "clip_norm": 5.0,
            "val_fraction": 0.0,
            "patience": None,
        },
        "recurrence_years": list(extremes.DEFAULT_RECURRENCE_YEARS),
        "figures": True,
    }


_TOP_LEVEL_KEYS = set(default_config_dict())
_REQUIRED_KEYS = ("stations", "out_dir")


def config_from_dict(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise PipelineConfigError("config root must be a mapping")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise PipelineConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in _REQUIRED_KEYS:
        if key not in raw:
            raise PipelineConfigError(f"missing required config key '{key}'")

    stations = []
    for i, entry in enumerate(raw["stations"] or []):
        if not isinstance(entry, dict) or "id" not in entry or "csv" not in entry:
            raise PipelineConfigError(
                f"config key 'stations[{i}]' must be a mapping with 'id' and 'csv'"
            )
        stations.append(StationRef(station_id=str(entry["id"]), csv=str(entry["csv"])))

    kwargs = {}
    for key in ("seed", "split_fraction", "alpha", "horizon", "warmup_days",
                "max_missing", "calibration", "model", "training", "figures"):
        if key in raw and raw[key] is not None:
            kwargs[key] = raw[key]
    if "taus" in raw and raw["taus"] is not None:
        kwargs["taus"] = tuple(float(t) for t in raw["taus"])
    if "recurrence_years" in raw and raw["recurrence_years"] is not None:
        kwargs["recurrence_years"] = tuple(float(k) for k in raw["recurrence_years"])

    return PipelineConfig(stations=tuple(stations), out_dir=str(raw["out_dir"]), **kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a YAML pipeline configuration."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise PipelineConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Per-station paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StationPaths:
    root: Path

    @property
    def train_csv(self) -> Path:
        return self.root / "train.csv"

    @property
    def test_csv(self) -> Path:
        return self.root / "test.csv"

    @property
    def gap_report(self) -> Path:
        return self.root / "gap_report.json"

    @property
    def calibration(self) -> Path:
        return self.root / "calibration.json"

    @property
    def calibration_trace(self) -> Path:
        return self.root / "calibration_trace.csv"

    @property
    def windows_train(self) -> Path:
        return self.root / "windows_train.npz"

    @property
    def windows_test(self) -> Path:
        return self.root / "windows_test.npz"

    @property
    def models_dir(self) -> Path:
        return self.root / "models"

    @property
    def forecast_train(self) -> Path:
        return self.root / "forecast_train.csv"

    @property
    def forecast_test(self) -> Path:
        return self.root / "forecast_test.csv"

    @property
    def metrics_train(self) -> Path:
        return self.root / "metrics_train.json"

    @property
    def metrics_test(self) -> Path:
        return self.root / "metrics_test.json"

    @property
    def gev(self) -> Path:
        return self.root / "gev.json"

    @property
    def flood_risk_csv(self) -> Path:
        return self.root / "flood_risk.csv"

    @property
    def tpr_csv(self) -> Path:
        return self.root / "tpr.csv"

    @property
    def figures_dir(self) -> Path:
        return self.root / "figures"


def station_paths(config: PipelineConfig, station_id: str) -> StationPaths:
    return StationPaths(root=Path(config.out_dir) / "stations" / station_id)


def _stamp(payload: dict, config: PipelineConfig) -> dict:
    payload = dict(payload)
    payload["config_hash"] = config.config_hash()
    payload["seed"] = config.seed
    return payload


def _write_json(path: Path, payload: dict, config: PipelineConfig) -> None:
    path.write_text(json.dumps(_stamp(payload, config), indent=2) + "\n")


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the {producer!r} stage first")
    return path


class _StageGuard:
    """Remove a stage's outputs if its body raises, then chain the error."""

    def __init__(self, stage: str, station_id: str, outputs: list[Path]):
        self.stage = stage
        self.station_id = station_id
        self.outputs = outputs

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None:
            for path in self.outputs:
                if path.is_dir():
                    shutil.rmtree(path, ignore_errors=True)
                elif path.exists():
                    path.unlink()
            raise StageError(self.stage, self.station_id, exc) from exc
        return False


def _ref(config: PipelineConfig, station_id: str) -> StationRef:
    for ref in config.stations:
        if ref.station_id == station_id:
            return ref
    raise PipelineConfigError(f"station {station_id!r} is not in the config")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_ingest(config: PipelineConfig, station_id: str) -> dict:
    ref = _ref(config, station_id)
    paths = station_paths(config, station_id)
    paths.root.mkdir(parents=True, exist_ok=True)
    outputs = [paths.train_csv, paths.test_csv, paths.gap_report]
    with _StageGuard("ingest", station_id, outputs):
        series = load_station(ref.csv, station_id=station_id)
        dense, report = audit_and_impute(series, max_missing=config.max_missing)
        train, test = chronological_split(dense, train_fraction=config.split_fraction)
        write_station_csv(paths.train_csv, train)
        write_station_csv(paths.test_csv, test)
        _write_json(paths.gap_report, report.to_dict(), config)
    return {
        "train_days": len(train),
        "test_days": len(test),
        "artifacts": [str(p) for p in outputs],
    }


def stage_calibrate(config: PipelineConfig, station_id: str) -> dict:
    paths = station_paths(config, station_id)
    outputs = [paths.calibration, paths.calibration_trace]
    with _StageGuard("calibrate", station_id, outputs):
        train = load_station(_require(paths.train_csv, "ingest"), station_id=station_id)
        de_config = config.de_config(config.station_seed(station_id))
        result = calibrate_mod.calibrate_gr4j(
            train, de_config, warmup_days=config.warmup_days
        )
        _write_json(paths.calibration, result.to_dict(), config)
        with open(paths.calibration_trace, "w", newline="") as fh:
            fh.write("generation,best_nse\n")
            for gen, value in enumerate(result.trace):
                fh.write(f"{gen},{value:.10g}\n")
        if config.figures:
            from . import plots

            plots.plot_calibration_trace(
                result.trace, paths.figures_dir / "calibration_convergence.png", station_id
            )
    return {"nse": result.score, "params": result.params.to_dict(),
            "artifacts": [str(p) for p in outputs]}


def stage_train(config: PipelineConfig, station_id: str) -> dict:
    paths = station_paths(config, station_id)
    outputs = [paths.windows_train, paths.windows_test, paths.models_dir]
    with _StageGuard("train", station_id, outputs):
        train = load_station(_require(paths.train_csv, "ingest"), station_id=station_id)
        test = load_station(_require(paths.test_csv, "ingest"), station_id=station_id)
        calibration = calibrate_mod.CalibrationResult.load(_require(paths.calibration, "calibrate"))
        train_ds, test_ds = build_split_datasets(
            train, test, x1=calibration.params.x1,
            alpha=config.alpha, horizon=config.horizon,
            warmup_days=config.warmup_days,
        )
        train_ds.save(paths.windows_train)
        test_ds.save(paths.windows_test)

        seed = config.station_seed(station_id)
        spec = config.model_spec(seed)
        train_cfg = config.train_config(seed)
        ensemble_obj, results = train_ensemble(train_ds, spec, train_cfg)
        save_ensemble(paths.models_dir, ensemble_obj, meta=_stamp(
            {"station_id": station_id, "x1": calibration.params.x1}, config
        ))
        traces = {}
        for tau, result in results.items():
            tag = f"q{int(round(tau * 100)):02d}"
            write_trace_csv(paths.root / f"loss_trace_{tag}.csv", result.train_trace)
            traces[tau] = result.train_trace
        if config.figures:
            from . import plots

            plots.plot_training_losses(
                traces, paths.figures_dir / "training_loss.png", station_id
            )
    return {
        "train_windows": len(train_ds),
        "test_windows": len(test_ds),
        "final_losses": {str(tau): results[tau].train_trace[-1] for tau in results},
        "artifacts": [str(p) for p in outputs],
    }


def stage_predict(config: PipelineConfig, station_id: str) -> dict:
    paths = station_paths(config, station_id)
    outputs = [paths.forecast_train, paths.forecast_test]
    with _StageGuard("predict", station_id, outputs):
        _require(paths.windows_train, "train")
        _require(paths.models_dir / "ensemble.json", "train")
        ensemble_obj = load_ensemble(paths.models_dir)
        diagnostics = {}
        for split, windows_path, out_path in (
            ("train", paths.windows_train, paths.forecast_train),
            ("test", paths.windows_test, paths.forecast_test),
        ):
            dataset = WindowedDataset.load(windows_path)
            forecast = forecast_dataset(ensemble_obj, dataset)
            write_forecast_csv(out_path, forecast)
            diagnostics[split] = {
                "crossing_cells": forecast.crossing_count,
                "clamped_cells": forecast.clamped_count,
            }
            if split == "test" and config.figures:
                from . import plots

                plots.plot_forecast_intervals(
                    forecast,
                    dataset.denormalized_targets(),
                    paths.figures_dir / "forecast_test.png",
                    station_id,
                )
    return {"diagnostics": diagnostics, "artifacts": [str(p) for p in outputs]}


def stage_evaluate(config: PipelineConfig, station_id: str) -> dict:
    paths = station_paths(config, station_id)
    outputs = [paths.metrics_train, paths.metrics_test]
    summary = {}
    with _StageGuard("evaluate", station_id, outputs):
        for split, windows_path, forecast_path, out_path in (
            ("train", paths.windows_train, paths.forecast_train, paths.metrics_train),
            ("test", paths.windows_test, paths.forecast_test, paths.metrics_test),
        ):
            _require(forecast_path, "predict")
            dataset = WindowedDataset.load(_require(windows_path, "train"))
            forecast = read_forecast_csv(forecast_path)
            observed = dataset.denormalized_targets()
            report = metrics.evaluate_forecast(
                station_id, split,
                median=forecast.median, lower=forecast.lower, upper=forecast.upper,
                obs=observed,
            )
            _write_json(out_path, report.to_dict(), config)
            summary[split] = report.to_dict()
    return {"metrics": summary, "artifacts": [str(p) for p in outputs]}


def stage_flood_risk(config: PipelineConfig, station_id: str) -> dict:
    paths = station_paths(config, station_id)
    outputs = [paths.gev, paths.flood_risk_csv, paths.tpr_csv]
    with _StageGuard("flood_risk", station_id, outputs):
        _require(paths.forecast_test, "predict")
        _require(paths.windows_test, "train")
        train = load_station(_require(paths.train_csv, "ingest"), station_id=station_id)
        years, maxima = extremes.annual_maxima(train.dates, train.streamflow)
        fit = extremes.fit_gev(maxima)
        _write_json(paths.gev, {**fit.to_dict(), "years": [int(y) for y in years]}, config)

        forecast = read_forecast_csv(paths.forecast_test)
        dataset = WindowedDataset.load(paths.windows_test)
        observed = dataset.denormalized_targets()

        per_threshold = {}
        tpr_rows = []
        for k_years in config.recurrence_years:
            threshold = extremes.flood_threshold(fit.params, k_years)
            levels = extremes.flood_risk_series(forecast.values, threshold.gamma)
            per_threshold[k_years] = (threshold, levels)
            labels = extremes.flood_labels(forecast.values, observed, threshold.gamma)
            tpr_rows.append((k_years, labels.tpr))
        extremes.write_flood_risk_csv(paths.flood_risk_csv, forecast.origin_dates, per_threshold)
        extremes.write_tpr_csv(paths.tpr_csv, station_id, tpr_rows)

        if config.figures:
            from . import plots

            k_plot = min(per_threshold)
            threshold, levels = per_threshold[k_plot]
            plots.plot_flood_risk(
                forecast, observed.max(axis=1), threshold.gamma, levels,
                k_plot, paths.figures_dir / "flood_risk.png", station_id,
            )
    return {
        "gev": fit.params.to_dict(),
        "tpr": {f"{k:g}": tpr for k, tpr in tpr_rows},
        "artifacts": [str(p) for p in outputs],
    }


_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "calibrate": stage_calibrate,
    "train": stage_train,
    "predict": stage_predict,
    "evaluate": stage_evaluate,
    "flood_risk": stage_flood_risk,
}


def run_stage(config: PipelineConfig, stage: str, station_id: str) -> dict:
    if stage not in _STAGE_FUNCS:
        raise ValueError(f"unknown stage {stage!r}, pick one of {STAGES}")
    start = time.perf_counter()
    result = _STAGE_FUNCS[stage](config, station_id)
    result["elapsed_s"] = round(time.perf_counter() - start, 3)
    logger.info("stage %s done for %s in %.1fs", stage, station_id, result["elapsed_s"])
    return result


def run_station(config: PipelineConfig, station_id: str) -> dict:
    """All stages for one station; returns per-stage summaries."""
    return {stage: run_stage(config, stage, station_id) for stage in STAGES}


def _run_station_job(config_dict: dict, station_id: str) -> tuple[str, dict]:
    config = config_from_dict(config_dict)
    return station_id, run_station(config, station_id)


def run_all(
    config: PipelineConfig,
    station_ids: list[str] | None = None,
    workers: int = 1,
) -> dict:
    """Run every stage for the selected stations and write the manifest.

    With ``workers > 1`` stations run in separate processes; results are
    identical to a sequential run because all seeds derive from the
    config, never from execution order.
    """
    if station_ids is None:
        station_ids = [s.station_id for s in config.stations]
    for sid in station_ids:
        _ref(config, sid)

    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    t0 = time.perf_counter()
    results: dict[str, dict] = {}
    if workers > 1 and len(station_ids) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_station_job, config.to_dict(), sid) for sid in station_ids
            ]
            for future in futures:
                sid, result = future.result()
                results[sid] = result
    else:
        for sid in station_ids:
            results[sid] = run_station(config, sid)

    manifest = {
        "started": started,
        "elapsed_s": round(time.perf_counter() - t0, 3),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "config": config.to_dict(),
        "stations": {
            sid: {
                "seed": config.station_seed(sid),
                "stages": results[sid],
            }
            for sid in station_ids
        },
    }
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
