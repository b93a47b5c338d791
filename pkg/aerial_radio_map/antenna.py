"""Antenna gain patterns for the base station and UAV."""
from __future__ import annotations

import abc
import dataclasses
import logging
import pathlib
from typing import Callable, Dict, Mapping, Optional, Union

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from aerial_radio_map.defaults import GAIN_FLOOR_LINEAR, PATTERN_COLUMNS
from aerial_radio_map.exceptions import (
    DataError,
    ElevationOutOfRange,
    SchemaError,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
Angle = Union[float, npt.ArrayLike]


def to_db(gain_linear: npt.ArrayLike) -> FloatArray:
    return 10.0 * np.log10(np.maximum(gain_linear, GAIN_FLOOR_LINEAR))


def from_db(gain_db: npt.ArrayLike) -> FloatArray:
    return np.power(10.0, np.asarray(gain_db, dtype=float) / 10.0)


@dataclasses.dataclass(frozen=True)
class PatternGrid:
    """Gain samples on a rectangular azimuth by elevation grid.

    ``gain_linear[i, j]`` belongs to ``azimuth_deg[i]`` and
    ``elevation_deg[j]``. Azimuth covers [0, 360) and wraps; elevation runs
    from -90 to 90 inclusive.
    """

    azimuth_deg: FloatArray
    elevation_deg: FloatArray
    gain_linear: FloatArray

    def __post_init__(self) -> None:
        az = np.asarray(self.azimuth_deg, dtype=float)
        el = np.asarray(self.elevation_deg, dtype=float)
        gains = np.asarray(self.gain_linear, dtype=float)
        object.__setattr__(self, "azimuth_deg", az)
        object.__setattr__(self, "elevation_deg", el)
        object.__setattr__(self, "gain_linear", gains)

        for name, axis in (("azimuth", az), ("elevation", el)):
            if axis.ndim != 1 or axis.size < 2:
                raise DataError(f"{name} axis needs at least two samples")
            if np.any(np.diff(axis) <= 0):
                raise DataError(f"{name} axis is not strictly increasing")
        if az[0] != 0.0 or az[-1] >= 360.0:
            raise DataError("azimuth axis must start at 0 and stay below 360")
        if el[0] != -90.0 or el[-1] != 90.0:
            raise DataError("elevation axis must span -90 to 90")
        if gains.shape != (az.size, el.size):
            raise DataError(
                f"gain matrix shape {gains.shape} does not match grid "
                f"({az.size}, {el.size})"
            )
        if not np.all(np.isfinite(gains)) or np.any(gains < 0):
            raise DataError("gains must be finite and nonnegative")


def _check_elevation(elevation_deg: FloatArray) -> None:
    if np.any(np.abs(elevation_deg) > 90.0) or np.any(
        ~np.isfinite(elevation_deg)
    ):
        raise ElevationOutOfRange(
            "elevation must lie in [-90, 90] degrees"
        )


class AntennaPattern(abc.ABC):
    kind: str = ""

    def gain(self, azimuth_deg: Angle, elevation_deg: Angle) -> FloatArray:
        """Linear gain toward the given direction, broadcasting the angles."""
        az = np.mod(np.asarray(azimuth_deg, dtype=float), 360.0)
        el = np.asarray(elevation_deg, dtype=float)
        _check_elevation(el)
        az, el = np.broadcast_arrays(az, el)
        return self._gain(az, el)

    @abc.abstractmethod
    def _gain(self, azimuth_deg: FloatArray,
              elevation_deg: FloatArray) -> FloatArray:
        """Evaluate the pattern on validated, wrapped angles."""


class MeasuredPattern(AntennaPattern):
    kind = "measured"

    def __init__(self, grid: PatternGrid) -> None:
        self.grid = grid
        az = np.append(grid.azimuth_deg, 360.0)
        gains = np.vstack([grid.gain_linear, grid.gain_linear[:1]])
        self._interpolator = RegularGridInterpolator(
            (az, grid.elevation_deg), gains, method="linear"
        )

    def _gain(self, azimuth_deg: FloatArray,
              elevation_deg: FloatArray) -> FloatArray:
        points = np.stack([azimuth_deg, elevation_deg], axis=-1)
        return np.asarray(self._interpolator(points), dtype=float)


class DipolePattern(AntennaPattern):
    """Half-wave dipole with a vertical axis.

    The polar angle from the axis is ``90 - elevation``; the nulls along the
    axis evaluate to 0.
    """

    kind = "dipole"

    def _gain(self, azimuth_deg: FloatArray,
              elevation_deg: FloatArray) -> FloatArray:
        theta = np.radians(90.0 - elevation_deg)
        sin_theta = np.sin(theta)
        degenerate = sin_theta < 1e-9
        safe = np.where(degenerate, 1.0, sin_theta)
        value = np.cos(0.5 * np.pi * np.cos(theta)) / safe
        return np.where(degenerate, 0.0, value)


class IsotropicPattern(AntennaPattern):
    kind = "isotropic"

    def __init__(self, gain_linear: float = 1.0) -> None:
        if not np.isfinite(gain_linear) or gain_linear < 0:
            raise DataError("isotropic gain must be finite and >= 0")
        self.gain_linear = float(gain_linear)

    def _gain(self, azimuth_deg: FloatArray,
              elevation_deg: FloatArray) -> FloatArray:
        return np.full(azimuth_deg.shape, self.gain_linear)


def gain(
    pattern: AntennaPattern, azimuth_deg: Angle, elevation_deg: Angle
) -> FloatArray:
    return pattern.gain(azimuth_deg, elevation_deg)


def combined_gain(
    bs: AntennaPattern,
    uav: AntennaPattern,
    azimuth_deg: Angle,
    elevation_deg: Angle,
) -> FloatArray:
    """Product of base-station and UAV gains at the same angles."""
    return bs.gain(azimuth_deg, elevation_deg) * uav.gain(
        azimuth_deg, elevation_deg
    )


def read_pattern_grid(path: pathlib.Path) -> PatternGrid:
    """Load a measured pattern from CSV in dBi.

    Rows may come in any order but every (azimuth, elevation) pair of the
    grid must appear exactly once.
    """
    try:
        frame = pd.read_csv(path)
    except pd.errors.ParserError as error:
        raise SchemaError(f"unable to parse {path}: {error}") from error
    missing = [c for c in PATTERN_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(
            f"{path} is missing columns: {', '.join(missing)}", line=1
        )
    frame = frame[list(PATTERN_COLUMNS)].apply(pd.to_numeric, errors="coerce")
    bad_rows = frame.index[frame.isna().any(axis=1)]
    if len(bad_rows) > 0:
        raise SchemaError(
            f"non-numeric value in {path}", line=int(bad_rows[0]) + 2
        )
    if frame.duplicated(["azimuth_deg", "elevation_deg"]).any():
        raise DataError(f"{path} has duplicated grid nodes")
    table = frame.pivot(
        index="azimuth_deg", columns="elevation_deg", values="gain_dbi"
    ).sort_index().sort_index(axis=1)
    if table.isna().to_numpy().any():
        raise DataError(f"{path} does not cover a full rectangular grid")
    logger.debug(
        "Loaded %d x %d pattern grid from %s",
        table.shape[0], table.shape[1], path
    )
    return PatternGrid(
        azimuth_deg=table.index.to_numpy(dtype=float),
        elevation_deg=table.columns.to_numpy(dtype=float),
        gain_linear=from_db(table.to_numpy(dtype=float)),
    )


def _measured_factory(
    path: Optional[pathlib.Path] = None, gain_dbi: float = 0.0
) -> AntennaPattern:
    if path is None:
        raise DataError("measured antenna pattern requires a file path")
    return MeasuredPattern(read_pattern_grid(path))


def _dipole_factory(
    path: Optional[pathlib.Path] = None, gain_dbi: float = 0.0
) -> AntennaPattern:
    return DipolePattern()


def _isotropic_factory(
    path: Optional[pathlib.Path] = None, gain_dbi: float = 0.0
) -> AntennaPattern:
    return IsotropicPattern(float(from_db(gain_dbi)))


pattern_factories: Mapping[
    str, Callable[[Optional[pathlib.Path], float], AntennaPattern]
] = {
    "measured": _measured_factory,
    "dipole": _dipole_factory,
    "isotropic": _isotropic_factory,
}


def build_pattern(
    kind: str,
    path: Optional[pathlib.Path] = None,
    gain_dbi: float = 0.0,
    factories: Optional[Mapping[str, Callable[..., AntennaPattern]]] = None,
) -> AntennaPattern:
    factories = factories if factories is not None else pattern_factories
    factory = factories.get(kind)
    if factory is None:
        raise DataError(
            f"unknown antenna pattern '{kind}', expected one of "
            f"{', '.join(sorted(factories))}"
        )
    return factory(path, gain_dbi)


def describe(pattern: AntennaPattern) -> Dict[str, object]:
    info: Dict[str, object] = {"kind": pattern.kind}
    if isinstance(pattern, IsotropicPattern):
        info["gain_dbi"] = float(to_db(pattern.gain_linear))
    return info
