import pathlib

import numpy as np
import pytest

from aerial_radio_map import antenna
from aerial_radio_map.exceptions import (
    DataError,
    ElevationOutOfRange,
    SchemaError,
)


@pytest.fixture
def pattern_csv(tmp_path):
    rows = ["azimuth_deg,elevation_deg,gain_dbi"]
    for az in (0.0, 90.0, 180.0, 270.0):
        for el in (-90.0, 0.0, 90.0):
            gain = 3.0 if el == 0.0 else -10.0
            rows.append(f"{az},{el},{gain + az / 90.0}")
    path = tmp_path / "pattern.csv"
    path.write_text("\n".join(rows) + "\n")
    return path


class TestDipolePattern:
    @pytest.fixture
    def pattern(self):
        return antenna.DipolePattern()

    def test_peak_at_horizon(self, pattern):
        assert pattern.gain(0.0, 0.0) == pytest.approx(1.0)

    def test_nulls_along_axis(self, pattern):
        assert pattern.gain([0.0, 0.0], [90.0, -90.0]) == pytest.approx(
            [0.0, 0.0]
        )

    def test_symmetric_in_elevation(self, pattern):
        assert pattern.gain(45.0, 30.0) == pytest.approx(
            pattern.gain(200.0, -30.0)
        )

    def test_rejects_elevation_beyond_vertical(self, pattern):
        with pytest.raises(ElevationOutOfRange):
            pattern.gain(0.0, 91.0)


def test_isotropic_from_dbi():
    pattern = antenna.build_pattern("isotropic", gain_dbi=3.0)
    assert pattern.gain(10.0, 10.0) == pytest.approx(10 ** 0.3)
    assert antenna.describe(pattern) == {
        "kind": "isotropic", "gain_dbi": pytest.approx(3.0)
    }


def test_combined_gain_is_product():
    bs = antenna.IsotropicPattern(2.0)
    uav = antenna.DipolePattern()
    assert antenna.combined_gain(bs, uav, 0.0, 0.0) == pytest.approx(2.0)


def test_to_db_floors_zero_gain():
    assert antenna.to_db(0.0) == pytest.approx(-120.0)


class TestMeasuredPattern:
    def test_returns_grid_nodes(self, pattern_csv):
        pattern = antenna.build_pattern("measured", pattern_csv)
        assert antenna.to_db(pattern.gain(90.0, 0.0)) == pytest.approx(4.0)

    def test_interpolates_between_nodes(self, pattern_csv):
        pattern = antenna.build_pattern("measured", pattern_csv)
        low = pattern.gain(0.0, 0.0)
        high = pattern.gain(90.0, 0.0)
        assert pattern.gain(45.0, 0.0) == pytest.approx((low + high) / 2)

    def test_wraps_azimuth(self, pattern_csv):
        pattern = antenna.build_pattern("measured", pattern_csv)
        assert pattern.gain(360.0, 0.0) == pytest.approx(
            pattern.gain(0.0, 0.0)
        )
        assert pattern.gain(-90.0, 0.0) == pytest.approx(
            pattern.gain(270.0, 0.0)
        )
        assert pattern.gain(315.0, 0.0) == pytest.approx(
            (pattern.gain(270.0, 0.0) + pattern.gain(0.0, 0.0)) / 2
        )

    def test_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("azimuth_deg,gain_dbi\n0,1\n")
        with pytest.raises(SchemaError) as error:
            antenna.read_pattern_grid(path)
        assert error.value.line == 1

    def test_incomplete_grid(self, pattern_csv):
        lines = pattern_csv.read_text().splitlines()
        pattern_csv.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataError):
            antenna.read_pattern_grid(pattern_csv)

    def test_needs_path(self):
        with pytest.raises(DataError):
            antenna.build_pattern("measured")


def test_pattern_grid_requires_full_elevation_span():
    with pytest.raises(DataError):
        antenna.PatternGrid(
            np.array([0.0, 180.0]),
            np.array([-45.0, 45.0]),
            np.ones((2, 2)),
        )


def test_unknown_pattern_kind():
    with pytest.raises(DataError) as error:
        antenna.build_pattern("yagi", pathlib.Path("unused.csv"))
    assert "yagi" in str(error.value)
