"""Station CSV loading, gap auditing, imputation, splitting, normalization."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qhydro.ingest import (
    CSV_COLUMNS,
    ForcingSeries,
    LoadError,
    Normalizer,
    StationRejectedError,
    ZeroVarianceError,
    audit,
    audit_and_impute,
    chronological_split,
    fit_normalizer,
    load_station,
    write_station_csv,
)

from conftest import make_series, row, write_rows


class TestLoadStation:
    def test_round_trip(self, tmp_path, series):
        path = tmp_path / "s.csv"
        write_station_csv(path, series)
        loaded = load_station(path, station_id="t1")
        assert loaded.station_id == "t1"
        np.testing.assert_array_equal(loaded.dates, series.dates)
        for name in ("precip", "evap", "tmin", "tmax", "vprp", "streamflow"):
            np.testing.assert_allclose(loaded.variable(name), series.variable(name),
                                       rtol=0, atol=5e-7)

    def test_station_id_defaults_to_stem(self, station_csv):
        assert load_station(station_csv).station_id == "t1"

    def test_missing_cells_become_nan(self, tmp_path):
        path = write_rows(tmp_path / "s.csv", [
            row("2001-01-01", 1, 2, 3, 4, 5, 6),
            row("2001-01-02", "", 2, 3, 4, "", 6),
        ])
        loaded = load_station(path)
        assert np.isnan(loaded.precip[1])
        assert np.isnan(loaded.vprp[1])
        assert loaded.evap[1] == 2.0

    def test_calendar_gap_filled_with_nan(self, tmp_path):
        path = write_rows(tmp_path / "s.csv", [
            row("2001-01-01", 1, 2, 3, 4, 5, 6),
            row("2001-01-04", 1, 2, 3, 4, 5, 6),
        ])
        loaded = load_station(path)
        assert len(loaded) == 4
        assert not loaded.is_dense()
        assert np.isnan(loaded.precip[1]) and np.isnan(loaded.streamflow[2])

    def test_wrong_header_rejected(self, tmp_path):
        path = write_rows(tmp_path / "s.csv", [row("2001-01-01", 1, 2, 3, 4, 5, 6)],
                          header=["date", "rain", "evap", "tmin", "tmax", "vprp", "flow"])
        with pytest.raises(LoadError, match="header"):
            load_station(path)

    def test_bad_date_names_row(self, tmp_path):
        path = write_rows(tmp_path / "s.csv", [
            row("2001-01-01", 1, 2, 3, 4, 5, 6),
            row("01/02/2001", 1, 2, 3, 4, 5, 6),
        ])
        with pytest.raises(LoadError, match="row 3"):
            load_station(path)

    def test_duplicate_date_rejected(self, tmp_path):
        path = write_rows(tmp_path / "s.csv", [
            row("2001-01-01", 1, 2, 3, 4, 5, 6),
            row("2001-01-01", 1, 2, 3, 4, 5, 6),
        ])
        with pytest.raises(LoadError, match="duplicate"):
            load_station(path)

    def test_out_of_order_dates_rejected(self, tmp_path):
        path = write_rows(tmp_path / "s.csv", [
            row("2001-01-02", 1, 2, 3, 4, 5, 6),
            row("2001-01-01", 1, 2, 3, 4, 5, 6),
        ])
        with pytest.raises(LoadError, match="order"):
            load_station(path)

    def test_negative_precip_rejected(self, tmp_path):
        path = write_rows(tmp_path / "s.csv", [row("2001-01-01", -1, 2, 3, 4, 5, 6)])
        with pytest.raises(LoadError, match="negative"):
            load_station(path)

    def test_non_numeric_cell_rejected(self, tmp_path):
        path = write_rows(tmp_path / "s.csv", [row("2001-01-01", "wet", 2, 3, 4, 5, 6)])
        with pytest.raises(LoadError, match="row 2"):
            load_station(path)

    def test_column_order_is_fixed(self):
        assert CSV_COLUMNS == ("date", "precip_mm", "evap_mm", "tmin_c",
                               "tmax_c", "vprp_hpa", "streamflow_mmd")


class TestAudit:
    def test_fractions_exact(self):
        series = make_series(20)
        series.precip[:4] = np.nan
        series.streamflow[0] = np.nan
        report = audit(series)
        assert report.total_days == 20
        assert report.missing["precip"] == 4
        assert report.fractions["precip"] == pytest.approx(0.2)
        assert report.fractions["streamflow"] == pytest.approx(0.05)
        assert report.fractions["evap"] == 0.0
        name, frac = report.worst()
        assert name == "precip" and frac == pytest.approx(0.2)

    def test_reject_above_threshold(self):
        series = make_series(40)
        series.streamflow[:6] = np.nan  # 15 percent
        with pytest.raises(StationRejectedError) as err:
            audit_and_impute(series, max_missing=0.10)
        assert err.value.report.fractions["streamflow"] == pytest.approx(0.15)

    def test_accept_at_threshold(self):
        series = make_series(40)
        series.precip[10:14] = np.nan  # exactly 10 percent
        imputed, report = audit_and_impute(series, max_missing=0.10)
        assert report.fractions["precip"] == pytest.approx(0.10)
        assert np.isfinite(imputed.precip).all()

    def test_linear_interior_fill(self):
        series = make_series(6)
        series.evap[:] = [1.0, np.nan, np.nan, 4.0, 5.0, 6.0]
        imputed, _ = audit_and_impute(series, max_missing=0.5)
        np.testing.assert_allclose(imputed.evap, [1, 2, 3, 4, 5, 6], atol=1e-12)

    def test_complete_series_untouched(self, series):
        imputed, report = audit_and_impute(series)
        assert report.worst()[1] == 0.0
        np.testing.assert_array_equal(imputed.precip, series.precip)
        np.testing.assert_array_equal(imputed.dates, series.dates)

    def test_missing_ends_trimmed(self):
        series = make_series(10)
        series.precip[0] = np.nan
        series.streamflow[-2:] = np.nan
        imputed, _ = audit_and_impute(series, max_missing=0.5)
        assert len(imputed) == 7
        assert imputed.dates[0] == series.dates[1]
        assert imputed.dates[-1] == series.dates[-3]

    def test_report_to_dict_round_trip(self, series):
        report = audit(series)
        as_dict = report.to_dict()
        assert as_dict["station_id"] == "t1"
        assert set(as_dict["missing"]) == set(report.missing)


class TestSplit:
    def test_sixty_forty(self):
        series = make_series(10)
        train, test = chronological_split(series, 0.6)
        assert len(train) == 6 and len(test) == 4
        assert train.dates[-1] < test.dates[0]

    def test_concat_recovers_original(self, series):
        train, test = chronological_split(series, 0.6)
        np.testing.assert_array_equal(
            np.concatenate([train.precip, test.precip]), series.precip)
        np.testing.assert_array_equal(
            np.concatenate([train.dates, test.dates]), series.dates)

    def test_floor_behaviour(self):
        train, test = chronological_split(make_series(7), 0.5)
        assert len(train) == 3 and len(test) == 4

    def test_invalid_fraction(self, series):
        with pytest.raises(ValueError):
            chronological_split(series, 0.0)
        with pytest.raises(ValueError):
            chronological_split(series, 1.5)


class TestNormalizer:
    def test_known_standardization(self):
        rows = np.array([[2.0], [4.0], [6.0]])
        norm = Normalizer.fit(rows, names=("x",))
        out = norm.transform(rows)
        np.testing.assert_allclose(out[:, 0], [-1.22474487, 0.0, 1.22474487], atol=1e-8)

    def test_population_std(self):
        rows = np.array([[1.0], [3.0]])
        norm = Normalizer.fit(rows, names=("x",))
        assert norm.std[0] == pytest.approx(1.0)  # not ddof=1

    def test_zero_variance_names_column(self):
        rows = np.column_stack([np.arange(5.0), np.full(5, 7.0)])
        with pytest.raises(ZeroVarianceError, match="flat"):
            Normalizer.fit(rows, names=("ok", "flat"))

    def test_single_column_any_shape(self):
        norm = Normalizer.fit(np.array([[1.0], [2.0], [3.0]]), names=("flow",))
        cube = np.arange(12.0).reshape(2, 3, 2)
        back = norm.inverse(norm.transform(cube))
        np.testing.assert_allclose(back, cube, atol=1e-12)

    def test_json_round_trip(self, tmp_path):
        rows = np.random.default_rng(3).normal(size=(20, 2))
        norm = Normalizer.fit(rows, names=("a", "b"))
        path = tmp_path / "norm.json"
        norm.save(path)
        loaded = Normalizer.load(path)
        assert loaded.names == norm.names
        np.testing.assert_allclose(loaded.mean, norm.mean, atol=0)
        np.testing.assert_allclose(loaded.std, norm.std, atol=0)

    def test_identity(self):
        ident = Normalizer.identity(("a", "b"))
        rows = np.random.default_rng(1).normal(size=(4, 2))
        np.testing.assert_array_equal(ident.transform(rows), rows)

    def test_fit_normalizer_from_series(self, series):
        norm = fit_normalizer(series)
        assert norm.names == ("precip", "evap", "tmin", "tmax", "vprp", "streamflow")
        assert norm.mean[0] == pytest.approx(series.precip.mean())

    @given(st.integers(0, 2**31 - 1))
    def test_round_trip_property(self, seed):
        rng = np.random.default_rng(seed)
        rows = rng.normal(loc=rng.uniform(-50, 50), scale=rng.uniform(0.1, 20),
                          size=(30, 3))
        norm = Normalizer.fit(rows, names=("a", "b", "c"))
        np.testing.assert_allclose(norm.inverse(norm.transform(rows)), rows,
                                   rtol=1e-10, atol=1e-10)
        out = norm.transform(rows)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-10)


class TestForcingSeries:
    def test_contiguity_enforced(self):
        dates = np.array(["2001-01-01", "2001-01-03"], dtype="datetime64[D]")
        with pytest.raises(ValueError, match="contiguous"):
            ForcingSeries("x", dates, *(np.ones(2) for _ in range(6)))

    def test_negative_forcing_rejected(self):
        dates = np.datetime64("2001-01-01", "D") + np.arange(3)
        arrays = [np.ones(3) for _ in range(6)]
        arrays[0][1] = -0.5
        with pytest.raises(ValueError, match="negative"):
            ForcingSeries("x", dates, *arrays)

    def test_slice(self, series):
        part = series.slice(5, 15)
        assert len(part) == 10
        np.testing.assert_array_equal(part.dates, series.dates[5:15])
        np.testing.assert_array_equal(part.tmax, series.tmax[5:15])

    def test_variable_unknown_name(self, series):
        with pytest.raises(KeyError):
            series.variable("snow")
