"""Differential evolution search and rainfall-runoff calibration."""

import numpy as np
import pytest

from qhydro import gr4j
from qhydro.calibrate import (
    DEFAULT_SYNTH_PARAMS,
    CalibrationResult,
    DeConfig,
    DeResult,
    calibrate_gr4j,
    differential_evolution,
    nse_objective,
    synth_catchment,
)

SPHERE_BOUNDS = ((-5.0, 5.0),) * 4
SPHERE_CENTER = np.array([1.2, -0.7, 2.4, 0.3])


def sphere(x: np.ndarray) -> float:
    return -float(np.sum((x - SPHERE_CENTER) ** 2))


class TestDeConfig:
    def test_defaults(self):
        config = DeConfig()
        assert config.population == 40
        assert config.f == 0.7 and config.cr == 0.9
        assert [b for b in config.bounds] == [
            gr4j.DEFAULT_BOUNDS[n] for n in ("x1", "x2", "x3", "x4")]

    def test_validation(self):
        with pytest.raises(ValueError):
            DeConfig(population=3)
        with pytest.raises(ValueError):
            DeConfig(f=0.0)
        with pytest.raises(ValueError):
            DeConfig(cr=1.2)
        with pytest.raises(ValueError):
            DeConfig(bounds=((1.0, 0.0),))

    def test_dict_round_trip(self):
        config = DeConfig(population=12, max_generations=50, seed=9)
        assert DeConfig.from_dict(config.to_dict()) == config


class TestDifferentialEvolution:
    def _config(self, **kwargs):
        defaults = dict(bounds=SPHERE_BOUNDS, population=24, max_generations=200,
                        stall_generations=40, seed=3)
        defaults.update(kwargs)
        return DeConfig(**defaults)

    def test_maximizes_sphere(self):
        result = differential_evolution(sphere, self._config())
        assert isinstance(result, DeResult)
        np.testing.assert_allclose(result.best_x, SPHERE_CENTER, atol=1e-3)
        assert result.best_score > -1e-6

    def test_trace_monotone_nondecreasing(self):
        result = differential_evolution(sphere, self._config(max_generations=60))
        trace = np.asarray(result.trace)
        assert len(trace) == result.generations + 1
        assert (np.diff(trace) >= 0.0).all()
        assert trace[-1] == result.best_score

    def test_deterministic_per_seed(self):
        a = differential_evolution(sphere, self._config(max_generations=40))
        b = differential_evolution(sphere, self._config(max_generations=40))
        np.testing.assert_array_equal(a.best_x, b.best_x)
        assert a.trace == b.trace
        c = differential_evolution(sphere, self._config(max_generations=40, seed=4))
        assert not np.array_equal(a.best_x, c.best_x)

    def test_candidates_respect_bounds(self):
        seen = []

        def recording(x):
            seen.append(x.copy())
            return sphere(x)

        differential_evolution(recording, self._config(max_generations=30))
        stacked = np.vstack(seen)
        lower = np.array([b[0] for b in SPHERE_BOUNDS])
        upper = np.array([b[1] for b in SPHERE_BOUNDS])
        assert (stacked >= lower).all() and (stacked <= upper).all()

    def test_non_finite_objective_not_selected(self):
        def patchy(x):
            if x[0] > 0.0:
                return float("nan")
            return -float(np.sum((x - np.array([-2.0, 0.0, 0.0, 0.0])) ** 2))

        result = differential_evolution(patchy, self._config(max_generations=120))
        assert np.isfinite(result.best_score)
        assert result.best_x[0] <= 0.0

    def test_early_stop_on_stall(self):
        result = differential_evolution(
            lambda x: 1.0, self._config(max_generations=500, stall_generations=10))
        assert result.stalled
        assert result.generations < 500

    def test_evaluation_count(self):
        config = self._config(max_generations=25, stall_generations=1000)
        result = differential_evolution(sphere, config)
        assert result.n_evaluations == config.population * (result.generations + 1)


class TestSynthCatchment:
    def test_deterministic(self):
        a = synth_catchment(n_days=500, seed=2)
        b = synth_catchment(n_days=500, seed=2)
        np.testing.assert_array_equal(a.precip, b.precip)
        np.testing.assert_array_equal(a.streamflow, b.streamflow)

    def test_noise_free_flow_matches_model(self):
        series = synth_catchment(DEFAULT_SYNTH_PARAMS, n_days=600, seed=4)
        sim = gr4j.simulate(DEFAULT_SYNTH_PARAMS, series.precip, series.evap,
                            warmup_days=0)
        np.testing.assert_allclose(series.streamflow, sim.q, atol=1e-12)

    def test_noise_does_not_change_forcing(self):
        clean = synth_catchment(n_days=400, seed=6)
        noisy = synth_catchment(n_days=400, seed=6, noise_std=0.1)
        np.testing.assert_array_equal(clean.precip, noisy.precip)
        np.testing.assert_array_equal(clean.evap, noisy.evap)
        assert not np.array_equal(clean.streamflow, noisy.streamflow)
        assert (noisy.streamflow >= 0.0).all()

    def test_physical_ranges(self):
        series = synth_catchment(n_days=1000, seed=1)
        assert (series.precip >= 0.0).all()
        assert (series.evap > 0.0).all()
        assert (series.streamflow >= 0.0).all()
        assert series.is_dense()


class TestNseObjective:
    def test_truth_scores_one_on_clean_data(self):
        series = synth_catchment(DEFAULT_SYNTH_PARAMS, n_days=1500, seed=7)
        score = nse_objective(DEFAULT_SYNTH_PARAMS, series, warmup_days=365)
        assert score == pytest.approx(1.0, abs=1e-9)

    def test_wrong_params_score_lower(self):
        series = synth_catchment(DEFAULT_SYNTH_PARAMS, n_days=1500, seed=7)
        wrong = gr4j.Gr4jParams(x1=1500.0, x2=5.0, x3=400.0, x4=8.0)
        assert nse_objective(wrong, series, warmup_days=365) < 0.8


class TestCalibrateGr4j:
    def test_small_budget_run(self, tmp_path):
        series = synth_catchment(n_days=900, seed=7, station_id="synth")
        config = DeConfig(population=12, max_generations=25,
                          stall_generations=25, seed=5)
        result = calibrate_gr4j(series, config=config, warmup_days=200)
        assert isinstance(result, CalibrationResult)
        assert result.station_id == "synth"
        assert result.score > 0.0
        lower = np.array([b[0] for b in config.bounds])
        upper = np.array([b[1] for b in config.bounds])
        vec = result.params.as_array()
        assert (vec >= lower).all() and (vec <= upper).all()

        path = tmp_path / "calibration.json"
        result.save(path)
        loaded = CalibrationResult.load(path)
        assert loaded.params == result.params
        assert loaded.score == pytest.approx(result.score)
        assert loaded.trace == result.trace
        assert loaded.config == result.config
