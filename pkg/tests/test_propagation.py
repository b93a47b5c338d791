import dataclasses
import math

import numpy as np
import pytest
from scipy import constants

from aerial_radio_map import geo, propagation
from aerial_radio_map.exceptions import CoLocated, DataError, InvalidAngle
from aerial_radio_map.measurements import MeasurementSet
from aerial_radio_map.propagation import (
    AngleMask,
    PathLossModel,
    PropagationConfig,
)


@pytest.fixture
def base_station():
    return geo.GeoLocation(35.7275, -78.6960, 10.0)


@pytest.fixture
def cfg():
    return PropagationConfig(carrier_hz=3.51e9, tx_power_dbm=10.0)


@pytest.fixture
def track(base_station):
    north = np.arange(20.0, 420.0, 4.0)
    return geo.offset_locations(
        base_station, np.zeros_like(north), north, 50.0
    )


def make_samples(locations, rsrp_dbm):
    n = len(locations)
    return MeasurementSet(
        t_s=np.arange(n, dtype=float),
        lat_deg=locations.lat_deg,
        lon_deg=locations.lon_deg,
        alt_m=locations.alt_m,
        rsrp_dbm=np.asarray(rsrp_dbm, dtype=float),
        flight_id=np.full(n, "f", dtype=object),
        height_label_m=locations.alt_m.copy(),
        sample_id=np.arange(n, dtype=np.int64),
        calibrated=True,
    )


def test_free_space_loss(cfg, base_station):
    uav = geo.offset_locations(base_station, [0.0], [100.0], 10.0)[0]
    lam = constants.c / cfg.carrier_hz
    expected = 20 * math.log10(4 * math.pi * 100.0 / lam)
    result = propagation.pathloss_free_space(cfg, base_station, uav)
    assert result.loss_db == pytest.approx(expected, abs=1e-6)


def test_two_ray_without_ground_ray_is_free_space(cfg, base_station, track):
    direct = propagation.pathloss_two_ray(
        cfg, base_station, track, ground_ray=False
    )
    free = propagation.pathloss_free_space(cfg, base_station, track)
    assert direct.loss_db == pytest.approx(free.loss_db)


def test_two_ray_differs_from_free_space(cfg, base_station, track):
    two_ray = propagation.pathloss(
        cfg, base_station, track, PathLossModel.TWO_RAY
    )
    free = propagation.pathloss(
        cfg, base_station, track, PathLossModel.FREE_SPACE
    )
    assert np.max(np.abs(two_ray.loss_db - free.loss_db)) > 1.0


def test_two_ray_is_bounded_by_coherent_sum(cfg, base_station, track):
    two_ray = propagation.pathloss(cfg, base_station, track)
    free = propagation.pathloss(
        cfg, base_station, track, PathLossModel.FREE_SPACE
    )
    assert np.all(two_ray.loss_db >= free.loss_db - 20 * math.log10(2.0))


def test_scalar_input_gives_scalar_result(cfg, base_station):
    uav = geo.offset_locations(base_station, [50.0], [0.0], 70.0)[0]
    rsrp = propagation.predict_rsrp(cfg, base_station, uav)
    assert isinstance(rsrp, float)


def test_colocated_link_raises(cfg, base_station):
    with pytest.raises(CoLocated):
        propagation.pathloss(cfg, base_station, base_station)


class TestReflectionCoefficient:
    def test_grazing_incidence_approaches_minus_one(self):
        gamma = propagation.reflection_coefficient(1e-6, 15.0)
        assert gamma == pytest.approx(-1.0, abs=1e-4)

    def test_normal_incidence(self):
        root = math.sqrt(15.0)
        gamma = propagation.reflection_coefficient(math.pi / 2, 15.0)
        assert gamma == pytest.approx((root - 1) / (root + 1))

    def test_magnitude_at_most_one(self):
        theta = np.linspace(0.01, math.pi / 2, 50)
        gamma = propagation.reflection_coefficient(theta, 4.0)
        assert np.all(np.abs(gamma) <= 1.0)

    @pytest.mark.parametrize("theta", [0.0, -0.1, 2.0, float("nan")])
    def test_invalid_angle(self, theta):
        with pytest.raises(InvalidAngle):
            propagation.reflection_coefficient(theta, 15.0)

    def test_permittivity_must_exceed_one(self):
        with pytest.raises(DataError):
            propagation.reflection_coefficient(0.5, 1.0)


def test_config_rejects_bad_values():
    with pytest.raises(DataError):
        PropagationConfig(carrier_hz=0.0)
    with pytest.raises(DataError):
        PropagationConfig(epsilon0=0.5)


def test_flagged_prediction_marks_unusable(cfg, base_station):
    points = geo.LocationArray.from_locations([
        base_station,
        geo.offset_locations(base_station, [0.0], [30.0], 0.0)[0],
        geo.offset_locations(base_station, [0.0], [30.0], 30.0)[0],
    ])
    predicted, valid = propagation.predicted_rsrp_flagged(
        cfg, base_station, points, PathLossModel.TWO_RAY
    )
    assert valid.tolist() == [False, False, True]
    assert np.isnan(predicted[:2]).all()
    assert np.isfinite(predicted[2])


def test_angle_mask_limits_elevation(cfg, base_station):
    masked = dataclasses.replace(
        cfg, angle_mask=AngleMask(los_elevation_deg=(0.0, 30.0))
    )
    points = geo.offset_locations(
        base_station, [0.0, 0.0], [100.0, 10.0], 30.0
    )
    _, valid = propagation.predicted_rsrp_flagged(
        masked, base_station, points, PathLossModel.TWO_RAY
    )
    assert valid.tolist() == [True, False]


def test_extract_shadowing_recovers_offset(cfg, base_station, track):
    predicted = propagation.predict_rsrp(cfg, base_station, track)
    samples = make_samples(track, predicted + 3.0)
    extraction = propagation.extract_shadowing(cfg, base_station, samples)
    assert extraction.w_db == pytest.approx(np.full(len(track), 3.0))
    assert extraction.flagged_count == 0


def test_fit_permittivity_recovers_ground(cfg, base_station, track):
    truth = dataclasses.replace(cfg, epsilon0=9.0)
    samples = make_samples(
        track, propagation.predict_rsrp(truth, base_station, track)
    )
    fitted = propagation.fit_permittivity(cfg, base_station, samples)
    assert fitted == pytest.approx(9.0, abs=0.1)


def test_two_ray_fades_below_free_space(cfg, base_station):
    north = np.arange(50.0, 1000.0, 0.25)
    uavs = geo.offset_locations(
        base_station, np.zeros_like(north), north, 70.0
    )
    two_ray = propagation.pathloss(cfg, base_station, uavs)
    free = propagation.pathloss(
        cfg, base_station, uavs, PathLossModel.FREE_SPACE
    )
    assert np.max(two_ray.loss_db - free.loss_db) >= 3.0
