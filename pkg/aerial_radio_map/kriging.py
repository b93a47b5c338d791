"""Ordinary kriging in three dimensions.

The system is assembled in semivariogram form: for M neighbors the
(M + 1) x (M + 1) matrix holds the pairwise semivariances bordered by ones,
and the right-hand side the target semivariances followed by 1.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import enum
import logging
import warnings
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.linalg
from scipy.spatial import cKDTree

from aerial_radio_map import geo
from aerial_radio_map.defaults import (
    DEFAULT_M_MAX,
    DEFAULT_N0,
    DEFAULT_R0_M,
    DEFAULT_XVAL_ITERATIONS,
)
from aerial_radio_map.exceptions import (
    DataError,
    InsufficientData,
    NoNeighbors,
    SingularSystem,
)
from aerial_radio_map.measurements import MeasurementSet
from aerial_radio_map.propagation import (
    PathLossModel,
    PropagationConfig,
    predicted_rsrp_flagged,
)
from aerial_radio_map.spatial_stats import (
    CorrelationModel3D,
    ShadowingStats,
    eval_correlation_3d,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
Trend = Callable[[geo.LocationArray], FloatArray]


@dataclasses.dataclass(frozen=True)
class Variogram:
    model: CorrelationModel3D
    nugget: float = 0.0

    def __post_init__(self) -> None:
        if self.nugget < 0:
            raise DataError("nugget must be nonnegative")

    @property
    def sill(self) -> float:
        return self.model.sigma_w2

    def gamma(self, d_v: npt.ArrayLike, d_h: npt.ArrayLike) -> FloatArray:
        return self.sill * (1.0 - eval_correlation_3d(self.model, d_v, d_h))

    def matrix(
        self, a: geo.LocationArray, b: Optional[geo.LocationArray] = None
    ) -> FloatArray:
        """Semivariances between every location of ``a`` and ``b``."""
        other = a if b is None else b
        d_h = geo.pairwise_horizontal_distances(a, other)
        d_v = np.abs(a.alt_m[:, None] - other.alt_m[None, :])
        return self.gamma(d_v, d_h)

    def to_dict(self) -> dict:
        return {
            "a": self.model.a,
            "b1": self.model.b1,
            "b2": self.model.b2,
            "d_cor_m": self.model.d_cor_m,
            "sigma_w2": self.model.sigma_w2,
            "nugget": self.nugget,
        }


def semivariogram(
    v: Variogram, li: geo.GeoLocation, lj: geo.GeoLocation
) -> float:
    d_h = geo.horizontal_distance(li, lj)
    return float(v.gamma(abs(li.alt_m - lj.alt_m), d_h))


@dataclasses.dataclass(frozen=True)
class Neighborhood:
    indices: npt.NDArray[np.intp]
    sample_ids: npt.NDArray[np.int64]
    distances_m: FloatArray

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclasses.dataclass(frozen=True)
class KrigingSolution:
    weights: FloatArray
    lagrange: float
    predicted_dbm: float
    neighbor_ids: npt.NDArray[np.int64]
    variance: float


def _rank_neighbors(
    candidates: npt.NDArray[np.intp],
    distances: FloatArray,
    sample_ids: npt.NDArray[np.int64],
    r0_m: float,
    m_max: int,
) -> Neighborhood:
    inside = distances <= r0_m
    candidates = candidates[inside]
    distances = distances[inside]
    if candidates.size == 0:
        raise NoNeighbors(f"no samples within {r0_m} m")
    ids = sample_ids[candidates]
    order = np.lexsort((ids, distances))[:m_max]
    return Neighborhood(candidates[order], ids[order], distances[order])


def _check_limits(r0_m: float, m_max: int) -> None:
    if not r0_m > 0:
        raise DataError("neighbor radius must be positive")
    if m_max < 1:
        raise DataError("neighbor limit must be at least 1")


def select_neighbors(
    target: geo.GeoLocation,
    pool: MeasurementSet,
    r0_m: float = DEFAULT_R0_M,
    m_max: int = DEFAULT_M_MAX,
) -> Neighborhood:
    """Pool samples within ``r0_m`` (3D) of the target, nearest first.

    At most ``m_max`` samples are kept; ties break on sample id.
    """
    _check_limits(r0_m, m_max)
    _, _, d_3d = geo.distances_3d(target, pool.locations)
    return _rank_neighbors(
        np.arange(len(pool), dtype=np.intp), d_3d,
        np.asarray(pool.sample_id), r0_m, m_max,
    )


class PoolIndex:
    """KD-tree over a pool in a local metric frame for radius queries.

    The tree only narrows the candidates; ranking uses exact distances.
    """

    def __init__(self, pool: MeasurementSet) -> None:
        if len(pool) == 0:
            raise InsufficientData("empty sample pool")
        self.pool = pool
        self.origin = pool.locations[0].with_altitude(0.0)
        self._tree = cKDTree(
            geo.local_coordinates(self.origin, pool.locations)
        )

    def select(
        self,
        target: geo.GeoLocation,
        r0_m: float = DEFAULT_R0_M,
        m_max: int = DEFAULT_M_MAX,
    ) -> Neighborhood:
        _check_limits(r0_m, m_max)
        point = geo.local_coordinates(
            self.origin, geo.LocationArray.from_locations([target])
        )[0]
        candidates = np.asarray(
            sorted(self._tree.query_ball_point(point, r0_m * 1.001 + 1e-3)),
            dtype=np.intp,
        )
        if candidates.size == 0:
            raise NoNeighbors(f"no samples within {r0_m} m of {target}")
        _, _, d_3d = geo.distances_3d(
            target, self.pool.locations.take(candidates)
        )
        return _rank_neighbors(
            candidates, d_3d, np.asarray(self.pool.sample_id), r0_m, m_max
        )


def solve_kriging_system(
    gamma_nn: FloatArray, gamma_0: FloatArray, nugget: float = 0.0
) -> Tuple[FloatArray, float]:
    """Solve the bordered system for the weights and the multiplier."""
    m = gamma_0.size
    if m < 1:
        raise NoNeighbors("kriging needs at least one neighbor")
    system = np.ones((m + 1, m + 1))
    system[:m, :m] = gamma_nn
    if nugget:
        system[np.arange(m), np.arange(m)] -= nugget
    system[m, m] = 0.0
    rhs = np.append(gamma_0, 1.0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            solution = scipy.linalg.solve(system, rhs, check_finite=True)
    except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as error:
        raise SingularSystem(
            f"kriging system with {m} neighbors is singular; near-duplicate "
            f"locations need a nugget"
        ) from error
    return solution[:m], float(solution[m])


def solve_kriging(
    v: Variogram,
    target: geo.GeoLocation,
    neighbor_locations: geo.LocationArray,
    neighbor_values: npt.ArrayLike,
    neighbor_ids: Optional[npt.ArrayLike] = None,
) -> KrigingSolution:
    values = np.asarray(neighbor_values, dtype=float)
    if len(neighbor_locations) == 0:
        raise NoNeighbors("kriging needs at least one neighbor")
    gamma_nn = v.matrix(neighbor_locations)
    gamma_0 = v.matrix(
        neighbor_locations, geo.LocationArray.from_locations([target])
    )[:, 0]
    weights, lagrange = solve_kriging_system(gamma_nn, gamma_0, v.nugget)
    ids = (
        np.arange(values.size, dtype=np.int64)
        if neighbor_ids is None else np.asarray(neighbor_ids, dtype=np.int64)
    )
    return KrigingSolution(
        weights=weights,
        lagrange=lagrange,
        predicted_dbm=float(weights @ values),
        neighbor_ids=ids,
        variance=float(weights @ gamma_0 + lagrange),
    )


class KrigingMode(enum.Enum):
    RSRP = "rsrp"
    RESIDUAL = "residual"


@dataclasses.dataclass(frozen=True)
class PathLossTrend:
    """Deterministic received power used for residuals and fallbacks."""

    cfg: PropagationConfig
    bs: geo.GeoLocation
    model: PathLossModel = PathLossModel.TWO_RAY

    def __call__(self, locations: geo.LocationArray) -> FloatArray:
        predicted, _ = predicted_rsrp_flagged(
            self.cfg, self.bs, locations, self.model
        )
        return predicted


@dataclasses.dataclass(frozen=True)
class Prediction:
    predicted_dbm: FloatArray
    neighbor_count: npt.NDArray[np.int64]
    fallback: npt.NDArray[np.bool_]
    variance: FloatArray


class KrigingPredictor:
    """Predicts received power at arbitrary locations from a sample pool."""

    def __init__(
        self,
        variogram: Variogram,
        pool: MeasurementSet,
        r0_m: float = DEFAULT_R0_M,
        m_max: int = DEFAULT_M_MAX,
        mode: KrigingMode = KrigingMode.RSRP,
        trend: Optional[Trend] = None,
    ) -> None:
        if len(pool) == 0:
            raise InsufficientData("empty sample pool")
        _check_limits(r0_m, m_max)
        if mode is KrigingMode.RESIDUAL and trend is None:
            raise DataError("residual kriging requires a path-loss trend")
        self.variogram = variogram
        self.pool = pool
        self.r0_m = r0_m
        self.m_max = m_max
        self.mode = mode
        self.trend = trend
        self.index = PoolIndex(pool)
        values = np.asarray(pool.rsrp_dbm, dtype=float)
        if mode is KrigingMode.RESIDUAL and trend is not None:
            values = values - trend(pool.locations)
        self.values = values

    def _predict_one(
        self, target: geo.GeoLocation
    ) -> Tuple[float, int, bool, float]:
        try:
            neighbors = self.index.select(target, self.r0_m, self.m_max)
        except NoNeighbors:
            if self.trend is None:
                raise
            fallback = self.trend(geo.LocationArray.from_locations([target]))
            return float(fallback[0]), 0, True, float("nan")
        solution = solve_kriging(
            self.variogram,
            target,
            self.pool.locations.take(neighbors.indices),
            self.values[neighbors.indices],
            neighbors.sample_ids,
        )
        predicted = solution.predicted_dbm
        if self.mode is KrigingMode.RESIDUAL and self.trend is not None:
            predicted += float(
                self.trend(geo.LocationArray.from_locations([target]))[0]
            )
        return predicted, len(neighbors), False, solution.variance

    def predict(
        self, targets: geo.LocationArray, threads: int = 1
    ) -> Prediction:
        """Predict every target; output order follows ``targets``."""
        if threads > 1:
            with concurrent.futures.ThreadPoolExecutor(threads) as executor:
                rows = list(executor.map(self._predict_one, targets))
        else:
            rows = [self._predict_one(target) for target in targets]
        if not rows:
            return Prediction(
                np.zeros(0), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=bool), np.zeros(0),
            )
        predicted, counts, fallback, variance = zip(*rows)
        fallback_array = np.array(fallback, dtype=bool)
        if fallback_array.any():
            logger.warning(
                "%d of %d targets had no neighbors within %g m; "
                "used path-loss prediction",
                int(fallback_array.sum()), len(rows), self.r0_m
            )
        return Prediction(
            predicted_dbm=np.array(predicted, dtype=float),
            neighbor_count=np.array(counts, dtype=np.int64),
            fallback=fallback_array,
            variance=np.array(variance, dtype=float),
        )


@dataclasses.dataclass(frozen=True)
class RmseSummary:
    median: float
    q25: float
    q75: float
    mean: float
    iterations: int
    M: int
    N0: int
    r0_m: float
    fallback_fraction: float
    rmse: FloatArray = dataclasses.field(repr=False)

    def to_dict(self) -> dict:
        return {
            "median": self.median,
            "q25": self.q25,
            "q75": self.q75,
            "mean": self.mean,
            "iterations": self.iterations,
            "M": self.M,
            "N0": self.N0,
            "r0_m": self.r0_m,
            "fallback_fraction": self.fallback_fraction,
        }


def _iteration_rmse(
    v: Variogram,
    pool: MeasurementSet,
    pool_values: FloatArray,
    targets: MeasurementSet,
    target_values: FloatArray,
    fallback_error: Optional[FloatArray],
    rng: np.random.Generator,
    m: int,
    n0: int,
    r0_m: float,
    exclude_training: bool,
) -> Tuple[float, int]:
    training = np.sort(rng.choice(len(pool), size=m, replace=False))
    candidates = np.arange(len(targets))
    if exclude_training:
        used = np.isin(targets.sample_id, pool.sample_id[training])
        candidates = candidates[~used]
    if candidates.size < n0:
        raise InsufficientData(
            f"only {candidates.size} validation samples left, need {n0}"
        )
    chosen = np.sort(rng.choice(candidates, size=n0, replace=False))

    train_locs = pool.locations.take(training)
    target_locs = targets.locations.take(chosen)
    gamma_train = v.matrix(train_locs)
    gamma_target = v.matrix(train_locs, target_locs)
    d_h = geo.pairwise_horizontal_distances(train_locs, target_locs)
    d_3d = np.hypot(
        d_h, np.abs(train_locs.alt_m[:, None] - target_locs.alt_m[None, :])
    )
    train_ids = pool.sample_id[training]

    errors = np.empty(n0)
    fallbacks = 0
    for column, target_index in enumerate(chosen):
        try:
            neighbors = _rank_neighbors(
                np.arange(m, dtype=np.intp), d_3d[:, column],
                train_ids, r0_m, m,
            )
        except NoNeighbors:
            if fallback_error is None:
                raise
            fallbacks += 1
            errors[column] = fallback_error[target_index]
            continue
        idx = neighbors.indices
        weights, _ = solve_kriging_system(
            gamma_train[np.ix_(idx, idx)], gamma_target[idx, column],
            v.nugget,
        )
        errors[column] = (
            weights @ pool_values[training][idx]
            - target_values[target_index]
        )
    return float(np.sqrt(np.mean(errors ** 2))), fallbacks


def cross_validate(
    v: Variogram,
    pool: MeasurementSet,
    targets: MeasurementSet,
    M: int,
    N0: int = DEFAULT_N0,
    r0_m: float = DEFAULT_R0_M,
    iterations: int = DEFAULT_XVAL_ITERATIONS,
    seed: int = 0,
    exclude_training: bool = True,
    mode: KrigingMode = KrigingMode.RSRP,
    trend: Optional[Trend] = None,
    threads: int = 1,
) -> RmseSummary:
    """Cross-validated RMSE of kriging predictions.

    Each iteration draws ``M`` training samples from ``pool`` and ``N0``
    validation samples from ``targets``, skipping targets used for
    training, and computes the RMSE of the predictions. Iterations use
    independent child seeds, so the summary does not depend on ``threads``.
    """
    if iterations < 1:
        raise DataError("cross-validation needs at least one iteration")
    if M < 1 or N0 < 1:
        raise DataError("M and N0 must be positive")
    if len(pool) < M:
        raise InsufficientData(f"pool holds {len(pool)} samples, need {M}")
    if len(targets) < N0:
        raise InsufficientData(
            f"targets hold {len(targets)} samples, need {N0}"
        )
    if mode is KrigingMode.RESIDUAL and trend is None:
        raise DataError("residual kriging requires a path-loss trend")

    pool_values = np.asarray(pool.rsrp_dbm, dtype=float)
    target_values = np.asarray(targets.rsrp_dbm, dtype=float)
    fallback_error = None
    if trend is not None:
        target_trend = trend(targets.locations)
        fallback_error = target_trend - target_values
        if mode is KrigingMode.RESIDUAL:
            pool_values = pool_values - trend(pool.locations)
            target_values = target_values - target_trend

    children = np.random.SeedSequence(seed).spawn(iterations)

    def run(child: np.random.SeedSequence) -> Tuple[float, int]:
        return _iteration_rmse(
            v, pool, pool_values, targets, target_values, fallback_error,
            np.random.default_rng(child), M, N0, r0_m, exclude_training,
        )

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(threads) as executor:
            results = list(executor.map(run, children))
    else:
        results = [run(child) for child in children]

    rmse = np.array([r for r, _ in results])
    fallbacks = sum(f for _, f in results)
    q25, median, q75 = np.percentile(rmse, [25, 50, 75])
    summary = RmseSummary(
        median=float(median),
        q25=float(q25),
        q75=float(q75),
        mean=float(rmse.mean()),
        iterations=iterations,
        M=M,
        N0=N0,
        r0_m=float(r0_m),
        fallback_fraction=fallbacks / float(iterations * N0),
        rmse=rmse,
    )
    logger.info(
        "Cross-validation M=%d N0=%d r0=%g: median RMSE %.3f dB",
        M, N0, r0_m, summary.median
    )
    return summary


def baseline_rmse(stats: ShadowingStats) -> float:
    """RMSE of a perfect path-loss prediction: the shadowing deviation."""
    return float(stats.std_db)


def cross_validation_sweep(
    v: Variogram,
    pool: MeasurementSet,
    targets: MeasurementSet,
    m_values: Sequence[int],
    r0_values_m: Sequence[float],
    N0: int = DEFAULT_N0,
    iterations: int = DEFAULT_XVAL_ITERATIONS,
    seed: int = 0,
    **kwargs,
) -> List[RmseSummary]:
    """Cross-validate every (r0, M) combination with one shared seed."""
    summaries = []
    for r0_m in r0_values_m:
        for m in m_values:
            summaries.append(
                cross_validate(
                    v, pool, targets, M=int(m), N0=N0, r0_m=float(r0_m),
                    iterations=iterations, seed=seed, **kwargs,
                )
            )
    return summaries


@dataclasses.dataclass(frozen=True)
class GridSpec:
    """Regular latitude/longitude/altitude grid, bounds inclusive."""

    lat_min: float
    lat_max: float
    lat_step: float
    lon_min: float
    lon_max: float
    lon_step: float
    alt_min: float
    alt_max: float
    alt_step: float

    def __post_init__(self) -> None:
        for axis in ("lat", "lon", "alt"):
            low = getattr(self, f"{axis}_min")
            high = getattr(self, f"{axis}_max")
            step = getattr(self, f"{axis}_step")
            if not step > 0:
                raise DataError(f"{axis} step must be positive")
            if high < low:
                raise DataError(f"{axis} range is empty")

    @staticmethod
    def _axis(low: float, high: float, step: float) -> FloatArray:
        count = int(np.floor((high - low) / step + 1e-9)) + 1
        return low + step * np.arange(count)

    def axes(self) -> Tuple[FloatArray, FloatArray, FloatArray]:
        return (
            self._axis(self.lat_min, self.lat_max, self.lat_step),
            self._axis(self.lon_min, self.lon_max, self.lon_step),
            self._axis(self.alt_min, self.alt_max, self.alt_step),
        )

    def locations(self) -> geo.LocationArray:
        """Grid nodes with altitude varying slowest and longitude fastest."""
        lat, lon, alt = self.axes()
        alt_grid, lat_grid, lon_grid = np.meshgrid(
            alt, lat, lon, indexing="ij"
        )
        return geo.LocationArray(
            lat_grid.ravel(), lon_grid.ravel(), alt_grid.ravel()
        )


@dataclasses.dataclass(frozen=True)
class RadioMap:
    locations: geo.LocationArray
    prediction: Prediction

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "lat_deg": self.locations.lat_deg,
            "lon_deg": self.locations.lon_deg,
            "alt_m": self.locations.alt_m,
            "predicted_dbm": self.prediction.predicted_dbm,
            "neighbor_count": self.prediction.neighbor_count,
            "fallback_flag": self.prediction.fallback.astype(int),
        })


def generate_radio_map(
    v: Variogram,
    pool: MeasurementSet,
    grid: GridSpec | geo.LocationArray,
    M: int = DEFAULT_M_MAX,
    r0_m: float = DEFAULT_R0_M,
    trend: Optional[Trend] = None,
    mode: KrigingMode = KrigingMode.RSRP,
    threads: int = 1,
) -> RadioMap:
    """Kriged received power over a grid (or explicit node list).

    Nodes without neighbors take the path-loss prediction and are flagged.
    """
    if len(pool) == 0:
        raise InsufficientData("cannot build a radio map from an empty pool")
    locations = grid.locations() if isinstance(grid, GridSpec) else grid
    predictor = KrigingPredictor(
        v, pool, r0_m=r0_m, m_max=M, mode=mode, trend=trend
    )
    prediction = predictor.predict(locations, threads=threads)
    logger.info("Built radio map with %d nodes", len(locations))
    return RadioMap(locations, prediction)
