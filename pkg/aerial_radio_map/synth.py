"""Synthetic flights and correlated shadowing fields with known truth."""
from __future__ import annotations

import dataclasses
import logging
import pathlib
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg

from aerial_radio_map import geo
from aerial_radio_map.defaults import (
    DEFAULT_HEIGHTS_M,
    DEFAULT_SAMPLE_SPACING_M,
    JITTER_MAX,
    JITTER_START,
)
from aerial_radio_map.exceptions import (
    DataError,
    FactorizationFailed,
    InvalidSpec,
)
from aerial_radio_map.measurements import MeasurementSet, write_measurements
from aerial_radio_map.propagation import (
    PathLossModel,
    PropagationConfig,
    predicted_rsrp_flagged,
)
from aerial_radio_map.spatial_stats import (
    CorrelationModel3D,
    eval_correlation_3d,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
Waypoints = Tuple[Tuple[float, float], ...]


@dataclasses.dataclass(frozen=True)
class TrajectorySpec:
    """Flight path flown identically at every height.

    Either explicit east/north ``waypoints`` (meters from ``origin``) or a
    zig-zag over a ``width_m`` by ``length_m`` box with legs running north
    and spaced ``leg_spacing_m`` apart. Segment lengths must be multiples of
    ``sample_spacing_m`` so turns fall on samples.
    """

    origin: geo.GeoLocation
    width_m: float = 200.0
    length_m: float = 200.0
    leg_spacing_m: float = 50.0
    sample_spacing_m: float = DEFAULT_SAMPLE_SPACING_M
    heights_m: Tuple[float, ...] = DEFAULT_HEIGHTS_M
    waypoints: Optional[Waypoints] = None
    speed_mps: float = 5.0

    def __post_init__(self) -> None:
        if not self.sample_spacing_m > 0:
            raise InvalidSpec("sample spacing must be positive")
        if not self.heights_m:
            raise InvalidSpec("at least one flight height is required")
        if any(not h > 0 for h in self.heights_m):
            raise InvalidSpec("flight heights must be positive")
        if not self.speed_mps > 0:
            raise InvalidSpec("flight speed must be positive")
        if self.waypoints is None:
            if not self.leg_spacing_m > 0:
                raise InvalidSpec("leg spacing must be positive")
            if self.width_m < 0 or not self.length_m > 0:
                raise InvalidSpec("zig-zag box must have positive length")
        elif len(self.waypoints) < 2:
            raise InvalidSpec("a waypoint path needs at least two points")


def zigzag_waypoints(spec: TrajectorySpec) -> FloatArray:
    legs = int(np.floor(spec.width_m / spec.leg_spacing_m + 1e-9)) + 1
    points = []
    for leg in range(legs):
        east = leg * spec.leg_spacing_m
        ends = (0.0, spec.length_m) if leg % 2 == 0 else (spec.length_m, 0.0)
        points.extend([(east, ends[0]), (east, ends[1])])
    return np.array(points, dtype=float)


def _sample_path(waypoints: FloatArray, spacing: float) -> FloatArray:
    segments = np.diff(waypoints, axis=0)
    lengths = np.hypot(segments[:, 0], segments[:, 1])
    keep = lengths > 0
    steps = lengths[keep] / spacing
    if np.any(np.abs(steps - np.round(steps)) > 1e-6 * np.maximum(steps, 1)):
        raise InvalidSpec(
            "segment lengths must be multiples of the sample spacing"
        )
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    count = int(np.round(cumulative[-1] / spacing)) + 1
    arc = spacing * np.arange(count)
    return np.column_stack([
        np.interp(arc, cumulative, waypoints[:, 0]),
        np.interp(arc, cumulative, waypoints[:, 1]),
    ])


def generate_trajectory(
    spec: TrajectorySpec,
) -> Dict[float, geo.LocationArray]:
    """Sampled path per height; the horizontal track is shared."""
    waypoints = (
        zigzag_waypoints(spec) if spec.waypoints is None
        else np.asarray(spec.waypoints, dtype=float)
    )
    track = _sample_path(waypoints, spec.sample_spacing_m)
    logger.debug(
        "Trajectory with %d samples per height over %d heights",
        len(track), len(spec.heights_m)
    )
    return {
        float(height): geo.offset_locations(
            spec.origin, track[:, 0], track[:, 1], height
        )
        for height in spec.heights_m
    }


class ShadowingFieldSampler:
    """Draws Gaussian fields with covariance ``sigma_w2 * R(d_v, d_h)``.

    The covariance is factored once; coincident locations share one
    variable so they always receive identical values.
    """

    def __init__(
        self, locations: geo.LocationArray, model: CorrelationModel3D
    ) -> None:
        coords = np.column_stack(
            [locations.lat_deg, locations.lon_deg, locations.alt_m]
        )
        unique, inverse = np.unique(coords, axis=0, return_inverse=True)
        self.inverse = inverse.reshape(-1)
        self.model = model
        points = geo.LocationArray(unique[:, 0], unique[:, 1], unique[:, 2])
        d_h = geo.pairwise_horizontal_distances(points, points)
        d_v = np.abs(points.alt_m[:, None] - points.alt_m[None, :])
        covariance = model.sigma_w2 * eval_correlation_3d(model, d_v, d_h)
        self.factor, self.jitter = self._factorize(covariance, model.sigma_w2)

    @staticmethod
    def _factorize(
        covariance: FloatArray, sigma_w2: float
    ) -> Tuple[FloatArray, float]:
        jitter = JITTER_START
        diagonal = np.arange(covariance.shape[0])
        while jitter <= JITTER_MAX * (1 + 1e-12):
            regularized = covariance.copy()
            regularized[diagonal, diagonal] += jitter * sigma_w2
            try:
                factor = scipy.linalg.cholesky(regularized, lower=True)
            except scipy.linalg.LinAlgError:
                logger.debug("Cholesky failed with jitter %.3g", jitter)
                jitter *= 2.0
                continue
            if jitter > JITTER_START:
                logger.warning(
                    "Covariance needed diagonal jitter %.3g * sigma^2",
                    jitter
                )
            return factor, jitter
        raise FactorizationFailed(
            f"covariance of {covariance.shape[0]} points is not positive "
            f"definite even with jitter {JITTER_MAX:g} * sigma^2"
        )

    def draw(self, rng: np.random.Generator) -> FloatArray:
        z = rng.standard_normal(self.factor.shape[0])
        return (self.factor @ z)[self.inverse]


def sample_shadowing_field(
    locations: geo.LocationArray,
    model: CorrelationModel3D,
    seed: int | np.random.SeedSequence,
    mean_db: npt.ArrayLike = 0.0,
) -> FloatArray:
    """One field draw at ``locations``, deterministic for a given seed."""
    sampler = ShadowingFieldSampler(locations, model)
    rng = np.random.default_rng(seed)
    return sampler.draw(rng) + np.asarray(mean_db, dtype=float)


@dataclasses.dataclass(frozen=True)
class SyntheticScenario:
    cfg: PropagationConfig
    bs: geo.GeoLocation
    model: CorrelationModel3D
    trajectory: TrajectorySpec
    seed: int = 0
    mean_offsets_db: Mapping[float, float] = dataclasses.field(
        default_factory=dict
    )
    pathloss_model: PathLossModel = PathLossModel.TWO_RAY
    shadowing_enabled: bool = True


def flight_name(height_m: float) -> str:
    return f"h{height_m:g}m"


def synthesize_rsrp(scenario: SyntheticScenario) -> MeasurementSet:
    """Received power along the trajectory with path loss plus shadowing.

    The truth columns keep the path loss and shadowing of every sample.
    """
    tracks = generate_trajectory(scenario.trajectory)
    heights = list(tracks)
    locations = geo.LocationArray(
        np.concatenate([tracks[h].lat_deg for h in heights]),
        np.concatenate([tracks[h].lon_deg for h in heights]),
        np.concatenate([tracks[h].alt_m for h in heights]),
    )
    predicted, valid = predicted_rsrp_flagged(
        scenario.cfg, scenario.bs, locations, scenario.pathloss_model
    )
    if not np.all(valid):
        raise DataError(
            f"{int((~valid).sum())} trajectory points have unusable link "
            f"geometry"
        )
    sizes = [len(tracks[h]) for h in heights]
    labels = np.repeat(np.array(heights, dtype=float), sizes)
    offsets = np.array(
        [scenario.mean_offsets_db.get(h, 0.0) for h in labels]
    )
    if scenario.shadowing_enabled:
        w = sample_shadowing_field(
            locations, scenario.model, scenario.seed, mean_db=offsets
        )
    else:
        w = np.zeros(len(locations))

    spacing = scenario.trajectory.sample_spacing_m
    t_s = np.concatenate([
        np.arange(n, dtype=float) * spacing / scenario.trajectory.speed_mps
        for n in sizes
    ])
    samples = MeasurementSet(
        t_s=t_s,
        lat_deg=locations.lat_deg,
        lon_deg=locations.lon_deg,
        alt_m=locations.alt_m,
        rsrp_dbm=predicted + w,
        flight_id=np.array(
            [flight_name(h) for h in labels], dtype=object
        ),
        height_label_m=labels,
        sample_id=np.arange(len(locations), dtype=np.int64),
        calibrated=True,
        true_pl_db=scenario.cfg.tx_power_dbm - predicted,
        true_w_db=w,
    )
    logger.info(
        "Synthesized %d samples over %d flights (seed %d)",
        len(samples), len(heights), scenario.seed
    )
    return samples


def write_synthetic_dataset(
    samples: MeasurementSet,
    out_dir: pathlib.Path,
    prefix: str = "synthetic",
) -> List[pathlib.Path]:
    """Write one measurement CSV and one ``_truth`` CSV per flight."""
    written = []
    for flight, subset in samples.flights().items():
        written.append(
            write_measurements(subset, out_dir / f"{prefix}_{flight}.csv")
        )
        written.append(
            write_measurements(
                subset,
                out_dir / f"{prefix}_{flight}_truth.csv",
                include_truth=True,
            )
        )
    return written
