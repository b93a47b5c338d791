"""Geodesic and link geometry between a base station and a UAV.

Horizontal distances are great-circle distances on a sphere of radius
``EARTH_RADIUS_M``. Altitudes are heights above a common flat ground plane,
which is also the plane of the ground reflection.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Iterable, Iterator, Tuple, Union

import numpy as np
import numpy.typing as npt

from aerial_radio_map.defaults import COLOCATED_TOLERANCE_M, EARTH_RADIUS_M
from aerial_radio_map.exceptions import CoLocated, DataError

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]
ArrayLike = Union[float, FloatArray]


@dataclasses.dataclass(frozen=True)
class GeoLocation:
    lat_deg: float
    lon_deg: float
    alt_m: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat_deg <= 90.0:
            raise DataError(f"latitude {self.lat_deg} outside [-90, 90]")
        if not -180.0 <= self.lon_deg <= 180.0:
            raise DataError(f"longitude {self.lon_deg} outside [-180, 180]")
        if not math.isfinite(self.alt_m) or self.alt_m < 0:
            raise DataError(f"altitude {self.alt_m} must be finite and >= 0")

    def with_altitude(self, alt_m: float) -> GeoLocation:
        return dataclasses.replace(self, alt_m=alt_m)


@dataclasses.dataclass(frozen=True)
class LocationArray:
    """Column-oriented collection of locations for vectorized geometry."""

    lat_deg: FloatArray
    lon_deg: FloatArray
    alt_m: FloatArray

    def __post_init__(self) -> None:
        for name in ("lat_deg", "lon_deg", "alt_m"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=float)
            )
        if not (self.lat_deg.shape == self.lon_deg.shape
                == self.alt_m.shape):
            raise DataError("location columns differ in length")

    @classmethod
    def from_locations(cls, locations: Iterable[GeoLocation]) -> LocationArray:
        items = list(locations)
        return cls(
            np.array([loc.lat_deg for loc in items], dtype=float),
            np.array([loc.lon_deg for loc in items], dtype=float),
            np.array([loc.alt_m for loc in items], dtype=float),
        )

    def __len__(self) -> int:
        return int(self.lat_deg.shape[0])

    def __getitem__(self, index: int) -> GeoLocation:
        return GeoLocation(
            float(self.lat_deg[index]),
            float(self.lon_deg[index]),
            float(self.alt_m[index]),
        )

    def __iter__(self) -> Iterator[GeoLocation]:
        for index in range(len(self)):
            yield self[index]

    def take(self, indices: npt.ArrayLike) -> LocationArray:
        idx = np.asarray(indices)
        return LocationArray(
            self.lat_deg[idx], self.lon_deg[idx], self.alt_m[idx]
        )


@dataclasses.dataclass(frozen=True)
class LinkGeometry:
    """Geometry of the direct and ground-reflected rays.

    Fields hold floats for a single link or arrays for a batch of links.
    ``delta_tau`` is left at zero here and filled in by the propagation
    module, which owns the wavelength.
    """

    d_h: ArrayLike
    d_v: ArrayLike
    d_3d: ArrayLike
    theta_l: ArrayLike
    theta_r: ArrayLike
    reflected_path_len: ArrayLike
    delta_tau: ArrayLike = 0.0


def central_angle(
    lat1: ArrayLike, lon1: ArrayLike, lat2: ArrayLike, lon2: ArrayLike
) -> FloatArray:
    """Great-circle angle in radians, broadcasting over the inputs.

    Evaluated in haversine form, which is algebraically identical to the
    spherical law of cosines but keeps full precision at separations of a
    few meters.
    """
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = (np.sin(dphi / 2.0) ** 2
         + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2)
    return 2.0 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def horizontal_distance(a: GeoLocation, b: GeoLocation) -> float:
    return float(
        EARTH_RADIUS_M
        * central_angle(a.lat_deg, a.lon_deg, b.lat_deg, b.lon_deg)
    )


def horizontal_distances(
    origin: GeoLocation, points: LocationArray
) -> FloatArray:
    return EARTH_RADIUS_M * central_angle(
        origin.lat_deg, origin.lon_deg, points.lat_deg, points.lon_deg
    )


def pairwise_horizontal_distances(
    a: LocationArray, b: LocationArray
) -> FloatArray:
    """Matrix of great-circle distances, rows from ``a`` and columns ``b``."""
    return EARTH_RADIUS_M * central_angle(
        a.lat_deg[:, None], a.lon_deg[:, None],
        b.lat_deg[None, :], b.lon_deg[None, :],
    )


def bearing_deg(
    lat1: ArrayLike, lon1: ArrayLike, lat2: ArrayLike, lon2: ArrayLike
) -> FloatArray:
    """Initial bearing in degrees clockwise from north, in [0, 360)."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    x = np.sin(dlmb) * np.cos(phi2)
    y = (np.cos(phi1) * np.sin(phi2)
         - np.sin(phi1) * np.cos(phi2) * np.cos(dlmb))
    return np.mod(np.degrees(np.arctan2(x, y)), 360.0)


def destination(
    origin: GeoLocation,
    bearing: ArrayLike,
    distance_m: ArrayLike,
) -> Tuple[FloatArray, FloatArray]:
    """Latitude and longitude reached from ``origin`` along a great circle."""
    delta = np.asarray(distance_m, dtype=float) / EARTH_RADIUS_M
    theta = np.radians(bearing)
    phi1 = math.radians(origin.lat_deg)
    lmb1 = math.radians(origin.lon_deg)
    phi2 = np.arcsin(
        math.sin(phi1) * np.cos(delta)
        + math.cos(phi1) * np.sin(delta) * np.cos(theta)
    )
    lmb2 = lmb1 + np.arctan2(
        np.sin(theta) * np.sin(delta) * math.cos(phi1),
        np.cos(delta) - math.sin(phi1) * np.sin(phi2),
    )
    lon = np.mod(np.degrees(lmb2) + 540.0, 360.0) - 180.0
    return np.degrees(phi2), lon


def offset_locations(
    origin: GeoLocation,
    east_m: npt.ArrayLike,
    north_m: npt.ArrayLike,
    alt_m: npt.ArrayLike,
) -> LocationArray:
    """Place points given in a local east/north frame around ``origin``.

    Uses the azimuthal equidistant projection, so distances from the origin
    are exact and local distances are distorted by well under 1e-9 over a
    flight area.
    """
    east = np.asarray(east_m, dtype=float)
    north = np.asarray(north_m, dtype=float)
    lat, lon = destination(
        origin,
        np.degrees(np.arctan2(east, north)),
        np.hypot(east, north),
    )
    alt = np.broadcast_to(np.asarray(alt_m, dtype=float), east.shape)
    return LocationArray(lat, lon, alt.copy())


def local_coordinates(
    origin: GeoLocation, points: LocationArray
) -> FloatArray:
    """Inverse of :func:`offset_locations` with altitude as third column."""
    distance = horizontal_distances(origin, points)
    bearing = np.radians(
        bearing_deg(
            origin.lat_deg, origin.lon_deg, points.lat_deg, points.lon_deg
        )
    )
    return np.column_stack(
        [distance * np.sin(bearing), distance * np.cos(bearing), points.alt_m]
    )


def _link_arrays(
    bs: GeoLocation,
    d_h: FloatArray,
    alt_m: FloatArray,
) -> LinkGeometry:
    d_v = np.abs(bs.alt_m - alt_m)
    image_height = bs.alt_m + alt_m
    with np.errstate(invalid="ignore", divide="ignore"):
        theta_l = np.arctan2(d_v, d_h)
        theta_r = np.arctan2(image_height, d_h)
    return LinkGeometry(
        d_h=d_h,
        d_v=d_v,
        d_3d=np.hypot(d_h, d_v),
        theta_l=theta_l,
        theta_r=theta_r,
        reflected_path_len=np.hypot(d_h, image_height),
    )


def colocated_mask(bs: GeoLocation, uavs: LocationArray) -> BoolArray:
    d_h = horizontal_distances(bs, uavs)
    return np.logical_and(
        d_h < COLOCATED_TOLERANCE_M,
        np.abs(bs.alt_m - uavs.alt_m) < COLOCATED_TOLERANCE_M,
    )


def link_geometries(bs: GeoLocation, uavs: LocationArray) -> LinkGeometry:
    """Batch form of :func:`link_geometry`.

    Co-located links are not rejected here; callers flag them with
    :func:`colocated_mask`.
    """
    return _link_arrays(bs, horizontal_distances(bs, uavs), uavs.alt_m)


def link_geometry(bs: GeoLocation, uav: GeoLocation) -> LinkGeometry:
    d_h = horizontal_distance(bs, uav)
    if (d_h < COLOCATED_TOLERANCE_M
            and abs(bs.alt_m - uav.alt_m) < COLOCATED_TOLERANCE_M):
        raise CoLocated(f"{bs} and {uav} are co-located")
    arrays = _link_arrays(
        bs, np.array([d_h]), np.array([uav.alt_m], dtype=float)
    )
    return LinkGeometry(
        **{
            field.name: float(np.asarray(getattr(arrays, field.name))[0])
            if field.name != "delta_tau" else 0.0
            for field in dataclasses.fields(arrays)
        }
    )


def distances_3d(
    target: GeoLocation, points: LocationArray
) -> Tuple[FloatArray, FloatArray, FloatArray]:
    """Horizontal, vertical and slant distances from ``target``."""
    d_h = horizontal_distances(target, points)
    d_v = np.abs(points.alt_m - target.alt_m)
    return d_h, d_v, np.hypot(d_h, d_v)
