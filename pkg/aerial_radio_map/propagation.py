"""Free-space and two-ray ground-reflection path loss.

``PathLossResult.gain_linear`` is the received to transmitted power ratio and
``loss_db`` its positive dB form, so a received power is
``tx_power_dbm - loss_db``.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
import math
from typing import TYPE_CHECKING, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy import constants
from scipy.optimize import minimize_scalar

from aerial_radio_map import geo
from aerial_radio_map.antenna import AntennaPattern, IsotropicPattern
from aerial_radio_map.defaults import (
    DEFAULT_BS_HEIGHT_M,
    DEFAULT_CARRIER_HZ,
    DEFAULT_EPSILON0,
    DEFAULT_TX_POWER_DBM,
    GAIN_FLOOR_LINEAR,
)
from aerial_radio_map.exceptions import (
    CoLocated,
    DataError,
    FitDiverged,
    InvalidAngle,
)

if TYPE_CHECKING:
    from aerial_radio_map.measurements import MeasurementSet

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]
Uav = Union[geo.GeoLocation, geo.LocationArray]


class PathLossModel(enum.Enum):
    TWO_RAY = "two_ray"
    FREE_SPACE = "free_space"


@dataclasses.dataclass(frozen=True)
class AngleMask:
    """Elevation windows, in degrees, inside which samples are usable.

    ``los_elevation_deg`` applies to the direct-ray elevation seen from the
    base station and ``reflection_deg`` to the ground reflection angle.
    """

    los_elevation_deg: Optional[Tuple[float, float]] = None
    reflection_deg: Optional[Tuple[float, float]] = None


@dataclasses.dataclass(frozen=True)
class PropagationConfig:
    carrier_hz: float = DEFAULT_CARRIER_HZ
    tx_power_dbm: float = DEFAULT_TX_POWER_DBM
    epsilon0: float = DEFAULT_EPSILON0
    bs_pattern: AntennaPattern = dataclasses.field(
        default_factory=IsotropicPattern
    )
    uav_pattern: AntennaPattern = dataclasses.field(
        default_factory=IsotropicPattern
    )
    bs_height_m: float = DEFAULT_BS_HEIGHT_M
    angle_mask: Optional[AngleMask] = None

    def __post_init__(self) -> None:
        if not self.carrier_hz > 0:
            raise DataError("carrier frequency must be positive")
        if not self.epsilon0 > 1:
            raise DataError("ground permittivity must exceed 1")
        if not math.isfinite(self.tx_power_dbm):
            raise DataError("transmit power must be finite")

    @property
    def wavelength_m(self) -> float:
        return float(constants.c / self.carrier_hz)


@dataclasses.dataclass(frozen=True)
class PathLossResult:
    gain_linear: Union[float, FloatArray]
    loss_db: Union[float, FloatArray]


def reflection_coefficient(
    theta_r: npt.ArrayLike, epsilon0: float
) -> FloatArray:
    """Ground reflection coefficient for vertical polarization."""
    theta = np.asarray(theta_r, dtype=float)
    if np.any(~np.isfinite(theta)) or np.any(theta <= 0) or np.any(
        theta > np.pi / 2 + 1e-12
    ):
        raise InvalidAngle("reflection angle must lie in (0, pi/2]")
    if not epsilon0 > 1:
        raise DataError("ground permittivity must exceed 1")
    root = np.sqrt(epsilon0 - np.cos(theta) ** 2)
    scaled = epsilon0 * np.sin(theta)
    return (scaled - root) / (scaled + root)


def _as_array(uav: Uav) -> geo.LocationArray:
    if isinstance(uav, geo.GeoLocation):
        return geo.LocationArray.from_locations([uav])
    return uav


def _to_result(gain_linear: FloatArray, scalar: bool) -> PathLossResult:
    gain_linear = np.maximum(gain_linear, GAIN_FLOOR_LINEAR)
    loss_db = -10.0 * np.log10(gain_linear)
    if scalar:
        return PathLossResult(float(gain_linear[0]), float(loss_db[0]))
    return PathLossResult(gain_linear, loss_db)


def _check_colocated(bs: geo.GeoLocation, uavs: geo.LocationArray) -> None:
    mask = geo.colocated_mask(bs, uavs)
    if np.any(mask):
        raise CoLocated(
            f"{int(mask.sum())} link(s) co-located with base station {bs}"
        )


def _direction(
    bs: geo.GeoLocation, uavs: geo.LocationArray, d_h: FloatArray
) -> Tuple[FloatArray, FloatArray]:
    """BS to UAV bearing and signed elevation of the direct ray."""
    azimuth = geo.bearing_deg(
        bs.lat_deg, bs.lon_deg, uavs.lat_deg, uavs.lon_deg
    )
    elevation = np.degrees(np.arctan2(uavs.alt_m - bs.alt_m, d_h))
    return azimuth, elevation


def two_ray_gain(
    cfg: PropagationConfig,
    bs: geo.GeoLocation,
    uavs: geo.LocationArray,
    ground_ray: bool = True,
) -> Tuple[FloatArray, geo.LinkGeometry]:
    """Two-ray power ratio without co-location checks."""
    link = geo.link_geometries(bs, uavs)
    lam = cfg.wavelength_m
    d_3d = np.asarray(link.d_3d)
    reflected = np.asarray(link.reflected_path_len)
    delta_tau = 2.0 * np.pi * (reflected - d_3d) / lam
    link = dataclasses.replace(link, delta_tau=delta_tau)

    azimuth, elevation = _direction(bs, uavs, np.asarray(link.d_h))
    g_los = cfg.bs_pattern.gain(azimuth, elevation) * cfg.uav_pattern.gain(
        azimuth, elevation
    )
    field = np.sqrt(g_los) / d_3d + 0j
    if ground_ray:
        theta_r = np.asarray(link.theta_r)
        reflection_el = -np.degrees(theta_r)
        g_ref = cfg.bs_pattern.gain(
            azimuth, reflection_el
        ) * cfg.uav_pattern.gain(azimuth, reflection_el)
        gamma = reflection_coefficient(theta_r, cfg.epsilon0)
        field = field + (
            gamma * np.sqrt(g_ref) * np.exp(-1j * delta_tau) / reflected
        )
    gain_linear = (lam / (4.0 * np.pi)) ** 2 * np.abs(field) ** 2
    return gain_linear, link


def pathloss_two_ray(
    cfg: PropagationConfig,
    bs: geo.GeoLocation,
    uav: Uav,
    ground_ray: bool = True,
) -> PathLossResult:
    """Coherent sum of the direct and ground-reflected rays.

    ``ground_ray=False`` drops the reflected term, which reduces the model
    to free space.
    """
    uavs = _as_array(uav)
    _check_colocated(bs, uavs)
    gain_linear, _ = two_ray_gain(cfg, bs, uavs, ground_ray=ground_ray)
    return _to_result(gain_linear, isinstance(uav, geo.GeoLocation))


def free_space_gain(
    cfg: PropagationConfig, bs: geo.GeoLocation, uavs: geo.LocationArray
) -> FloatArray:
    link = geo.link_geometries(bs, uavs)
    azimuth, elevation = _direction(bs, uavs, np.asarray(link.d_h))
    gains = cfg.bs_pattern.gain(azimuth, elevation) * cfg.uav_pattern.gain(
        azimuth, elevation
    )
    lam = cfg.wavelength_m
    return np.asarray(
        (lam / (4.0 * np.pi)) ** 2 * gains / np.asarray(link.d_3d) ** 2
    )


def pathloss_free_space(
    cfg: PropagationConfig, bs: geo.GeoLocation, uav: Uav
) -> PathLossResult:
    uavs = _as_array(uav)
    _check_colocated(bs, uavs)
    return _to_result(
        free_space_gain(cfg, bs, uavs), isinstance(uav, geo.GeoLocation)
    )


def pathloss(
    cfg: PropagationConfig,
    bs: geo.GeoLocation,
    uav: Uav,
    model: PathLossModel = PathLossModel.TWO_RAY,
) -> PathLossResult:
    if model is PathLossModel.TWO_RAY:
        return pathloss_two_ray(cfg, bs, uav)
    return pathloss_free_space(cfg, bs, uav)


def predict_rsrp(
    cfg: PropagationConfig,
    bs: geo.GeoLocation,
    uav: Uav,
    model: PathLossModel = PathLossModel.TWO_RAY,
) -> Union[float, FloatArray]:
    """Deterministic received power in dBm (no shadowing)."""
    result = pathloss(cfg, bs, uav, model)
    if isinstance(result.loss_db, float):
        return cfg.tx_power_dbm - result.loss_db
    return cfg.tx_power_dbm - np.asarray(result.loss_db)


def angle_window_flags(
    cfg: PropagationConfig, bs: geo.GeoLocation, uavs: geo.LocationArray
) -> BoolArray:
    """True where a link falls inside every configured angle window."""
    inside = np.ones(len(uavs), dtype=bool)
    mask = cfg.angle_mask
    if mask is None:
        return inside
    link = geo.link_geometries(bs, uavs)
    if mask.los_elevation_deg is not None:
        _, elevation = _direction(bs, uavs, np.asarray(link.d_h))
        low, high = mask.los_elevation_deg
        inside &= (elevation >= low) & (elevation <= high)
    if mask.reflection_deg is not None:
        theta_r = np.degrees(np.asarray(link.theta_r))
        low, high = mask.reflection_deg
        inside &= (theta_r >= low) & (theta_r <= high)
    return inside


def predicted_rsrp_flagged(
    cfg: PropagationConfig,
    bs: geo.GeoLocation,
    uavs: geo.LocationArray,
    model: PathLossModel,
) -> Tuple[FloatArray, BoolArray]:
    """Predicted dBm per location plus a validity flag.

    Locations with unusable geometry get NaN and ``False`` instead of
    raising, so batch callers can report them.
    """
    valid = ~geo.colocated_mask(bs, uavs) & (uavs.alt_m > 0)
    valid &= angle_window_flags(cfg, bs, uavs)
    predicted = np.full(len(uavs), np.nan)
    if np.any(valid):
        subset = uavs.take(np.flatnonzero(valid))
        if model is PathLossModel.TWO_RAY:
            gains, _ = two_ray_gain(cfg, bs, subset)
        else:
            gains = free_space_gain(cfg, bs, subset)
        gains = np.maximum(gains, GAIN_FLOOR_LINEAR)
        predicted[valid] = cfg.tx_power_dbm + 10.0 * np.log10(gains)
    return predicted, valid


@dataclasses.dataclass(frozen=True)
class ShadowingExtraction:
    w_db: FloatArray
    valid: BoolArray

    @property
    def flagged_count(self) -> int:
        return int(np.count_nonzero(~self.valid))


def extract_shadowing(
    cfg: PropagationConfig,
    bs: geo.GeoLocation,
    samples: MeasurementSet,
    model: PathLossModel = PathLossModel.TWO_RAY,
) -> ShadowingExtraction:
    """Shadowing per sample as measured minus predicted power.

    Output order and length match ``samples``; flagged samples carry NaN.
    """
    predicted, valid = predicted_rsrp_flagged(
        cfg, bs, samples.locations, model
    )
    w_db = np.asarray(samples.rsrp_dbm, dtype=float) - predicted
    extraction = ShadowingExtraction(w_db=w_db, valid=valid)
    if extraction.flagged_count:
        logger.warning(
            "%d of %d samples flagged with unusable link geometry",
            extraction.flagged_count, len(w_db)
        )
    return extraction


def fit_permittivity(
    cfg: PropagationConfig,
    bs: geo.GeoLocation,
    samples: MeasurementSet,
    bounds: Tuple[float, float] = (1.0 + 1e-6, 81.0),
) -> float:
    """Ground permittivity minimizing the two-ray fitting RMSE."""

    def objective(epsilon0: float) -> float:
        trial = dataclasses.replace(cfg, epsilon0=epsilon0)
        predicted, valid = predicted_rsrp_flagged(
            trial, bs, samples.locations, PathLossModel.TWO_RAY
        )
        error = np.asarray(samples.rsrp_dbm)[valid] - predicted[valid]
        return float(np.sqrt(np.mean(error ** 2)))

    result = minimize_scalar(objective, bounds=bounds, method="bounded")
    if not result.success:
        raise FitDiverged(f"permittivity fit failed: {result.message}")
    logger.info("Fitted ground permittivity %.3f", result.x)
    return float(result.x)
