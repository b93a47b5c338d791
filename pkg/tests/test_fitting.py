import dataclasses

import numpy as np
import pytest

from aerial_radio_map import antenna, fitting, geo
from aerial_radio_map.exceptions import DataError, TooFewSamples
from aerial_radio_map.measurements import MeasurementSet
from aerial_radio_map.propagation import (
    PathLossModel,
    PropagationConfig,
    predict_rsrp,
)

BS = geo.GeoLocation(35.7275, -78.6960, 10.0)


@pytest.fixture
def cfg():
    return PropagationConfig(
        bs_pattern=antenna.DipolePattern(),
        uav_pattern=antenna.DipolePattern(),
    )


@pytest.fixture
def samples(cfg):
    north = np.arange(20.0, 320.0, 5.0)
    sets = []
    for flight, height in (("h30m", 30.0), ("h70m", 70.0)):
        locations = geo.offset_locations(BS, 0.0 * north, north, height)
        n = len(locations)
        sets.append(MeasurementSet(
            t_s=np.arange(n, dtype=float),
            lat_deg=locations.lat_deg,
            lon_deg=locations.lon_deg,
            alt_m=locations.alt_m,
            rsrp_dbm=predict_rsrp(cfg, BS, locations),
            flight_id=np.full(n, flight, dtype=object),
            height_label_m=np.full(n, height),
            sample_id=np.arange(n, dtype=np.int64),
            calibrated=True,
        ))
    return MeasurementSet.concat(sets)


def test_error_statistics():
    stats = fitting.error_statistics([1.0, -1.0, np.nan, 3.0])
    assert stats.n_samples == 3
    assert stats.mean_db == pytest.approx(1.0)
    assert stats.rmse_db == pytest.approx(np.sqrt(11.0 / 3.0))
    assert stats.cdf_errors_db[0] == -1.0
    assert stats.cdf_errors_db[-1] == 3.0
    assert len(stats.cdf_levels) == len(stats.cdf_errors_db) == 21


def test_error_statistics_needs_values():
    with pytest.raises(TooFewSamples):
        fitting.error_statistics([np.nan])


def test_fitting_error_sign(cfg, samples):
    weaker = dataclasses.replace(samples, rsrp_dbm=samples.rsrp_dbm - 2.0)
    errors = fitting.fitting_errors(cfg, BS, weaker, PathLossModel.TWO_RAY)
    assert errors == pytest.approx(np.full(len(samples), 2.0))


def test_error_by_distance_bins():
    table = fitting.error_by_distance(
        [1.0, 3.0, -2.0], [10.0, 40.0, 60.0], bin_m=50.0
    )
    assert table["distance_m"].tolist() == [25.0, 75.0]
    assert table["count"].tolist() == [2, 1]
    assert table["mean_error_db"].tolist() == pytest.approx([2.0, -2.0])


def test_error_by_distance_empty():
    table = fitting.error_by_distance([np.nan], [10.0], bin_m=50.0)
    assert table.empty
    assert "rmse_db" in table.columns


def test_error_by_distance_rejects_bin():
    with pytest.raises(DataError):
        fitting.error_by_distance([1.0], [1.0], bin_m=0.0)


def test_pattern_setups(cfg):
    setups = fitting.pattern_setups(
        ["configured", "isotropic"], cfg.bs_pattern, cfg.uav_pattern
    )
    assert [setup.name for setup in setups] == ["configured", "isotropic"]
    assert setups[0].bs_pattern is cfg.bs_pattern
    assert setups[1].uav_pattern.kind == "isotropic"


def test_compare_setups_picks_generating_setup(cfg, samples):
    setups = fitting.pattern_setups(
        ["configured", "isotropic"], cfg.bs_pattern, cfg.uav_pattern
    )
    fits, table = fitting.compare_setups(
        cfg, BS, samples, setups, distance_bin_m=100.0
    )
    assert len(fits) == 4
    best = fitting.best_setup(fits)
    assert (best.setup, best.pathloss_model) == ("configured", "two_ray")
    assert best.overall.rmse_db == pytest.approx(0.0, abs=1e-9)
    assert sorted(best.per_height) == ["30", "70"]
    assert list(table.columns[:4]) == [
        "setup", "pathloss_model", "height_m", "distance_m"
    ]
    assert set(table["setup"]) == {"configured", "isotropic"}


def test_best_setup_of_nothing():
    assert fitting.best_setup([]) is None
