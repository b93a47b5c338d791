"""Shadowing distribution fits and spatial correlation estimation."""
from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math
from typing import (
    Callable,
    Dict,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy import stats as scipy_stats
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from aerial_radio_map import geo
from aerial_radio_map.defaults import (
    DEFAULT_BIN_M,
    DEFAULT_MIXTURE_WEIGHT,
    DEFAULT_VERTICAL_MATCH_M,
    MIN_VERTICAL_PAIRS,
)
from aerial_radio_map.exceptions import (
    DataError,
    DegenerateStd,
    EmptyBin,
    FitDiverged,
    InvalidScale,
    NoOverlap,
    TooFewSamples,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
PairFunction = Callable[[FloatArray, FloatArray], FloatArray]

LN2 = math.log(2.0)
ALPHA_GRID = np.arange(-600, 601) / 100.0
BLOCK_ROWS = 256


class GaussianFit(NamedTuple):
    mean_db: float
    std_db: float

    @property
    def degenerate(self) -> bool:
        return not self.std_db > 0


@dataclasses.dataclass(frozen=True)
class ShadowingStats:
    mean_db: float
    std_db: float
    alpha: float
    nmse_gaussian: float
    nmse_skewed: float
    xi: float
    omega: float
    n_samples: int = 0


def fit_gaussian(w: npt.ArrayLike) -> GaussianFit:
    """Sample mean and population standard deviation."""
    values = np.asarray(w, dtype=float)
    if values.size < 2:
        raise TooFewSamples(
            f"need at least 2 samples for a Gaussian fit, got {values.size}"
        )
    fit = GaussianFit(float(np.mean(values)), float(np.std(values)))
    if fit.degenerate:
        logger.warning("Shadowing samples are constant; std is 0")
    return fit


def skew_normal_pdf(
    x: npt.ArrayLike, xi: float, omega: float, alpha: float
) -> FloatArray:
    """Skew-normal density including the ``1/omega`` normalization."""
    if not omega > 0:
        raise InvalidScale(f"scale must be positive, got {omega}")
    return np.asarray(
        scipy_stats.skewnorm.pdf(x, alpha, loc=xi, scale=omega), dtype=float
    )


def moment_matched_parameters(
    mean: float, std: float, alpha: npt.ArrayLike
) -> Tuple[FloatArray, FloatArray]:
    """Location and scale giving a skew-normal the requested mean and std."""
    alpha = np.asarray(alpha, dtype=float)
    delta = alpha / np.sqrt(1.0 + alpha ** 2)
    omega = std / np.sqrt(1.0 - 2.0 * delta ** 2 / np.pi)
    xi = mean - omega * delta * np.sqrt(2.0 / np.pi)
    return xi, omega


def _nmse(histogram: FloatArray, model: FloatArray) -> FloatArray:
    return np.sum((histogram - model) ** 2, axis=-1) / np.sum(histogram ** 2)


def fit_skew_normal(
    w: npt.ArrayLike,
    histogram_bins: Union[int, str] = 60,
    alpha_grid: Optional[FloatArray] = None,
) -> ShadowingStats:
    """Pick the skewness whose moment-matched density best fits the data.

    Both densities are compared with a density normalized histogram and
    scored by NMSE. The grid includes ``alpha = 0``, the Gaussian itself,
    so the skewed NMSE never exceeds the Gaussian one.
    """
    values = np.asarray(w, dtype=float)
    if values.size < 100:
        raise TooFewSamples(
            f"need at least 100 samples for a skew-normal fit, "
            f"got {values.size}"
        )
    gaussian = fit_gaussian(values)
    if gaussian.degenerate:
        raise DegenerateStd("cannot fit a distribution to constant samples")

    histogram, edges = np.histogram(values, bins=histogram_bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    nmse_gaussian = float(
        _nmse(
            histogram,
            scipy_stats.norm.pdf(centers, gaussian.mean_db, gaussian.std_db),
        )
    )

    grid = ALPHA_GRID if alpha_grid is None else np.asarray(alpha_grid)
    xi, omega = moment_matched_parameters(
        gaussian.mean_db, gaussian.std_db, grid
    )
    densities = scipy_stats.skewnorm.pdf(
        centers[None, :], grid[:, None],
        loc=xi[:, None], scale=omega[:, None],
    )
    scores = _nmse(histogram[None, :], densities)
    best = int(np.argmin(scores))
    logger.debug(
        "Skew-normal fit: alpha=%.2f nmse=%.5f (gaussian %.5f)",
        grid[best], scores[best], nmse_gaussian
    )
    return ShadowingStats(
        mean_db=gaussian.mean_db,
        std_db=gaussian.std_db,
        alpha=float(grid[best]),
        nmse_gaussian=nmse_gaussian,
        nmse_skewed=float(min(scores[best], nmse_gaussian)),
        xi=float(xi[best]),
        omega=float(omega[best]),
        n_samples=int(values.size),
    )


def pair_correlation(
    w_i: npt.ArrayLike,
    w_j: npt.ArrayLike,
    stats_i: Union[GaussianFit, ShadowingStats],
    stats_j: Union[GaussianFit, ShadowingStats],
) -> FloatArray:
    if not (stats_i.std_db > 0 and stats_j.std_db > 0):
        raise DegenerateStd("pair correlation needs positive deviations")
    return (
        (np.asarray(w_i) - stats_i.mean_db)
        * (np.asarray(w_j) - stats_j.mean_db)
        / (stats_i.std_db * stats_j.std_db)
    )


@dataclasses.dataclass(frozen=True)
class ShadowingSeries:
    """Shadowing of one flight with the statistics used to normalize it."""

    flight_id: str
    height_m: float
    locations: geo.LocationArray
    w_db: FloatArray
    stats: GaussianFit

    @classmethod
    def from_values(
        cls,
        flight_id: str,
        height_m: float,
        locations: geo.LocationArray,
        w_db: npt.ArrayLike,
        stats: Optional[GaussianFit] = None,
    ) -> ShadowingSeries:
        """Drop NaN samples and estimate statistics unless given."""
        values = np.asarray(w_db, dtype=float)
        keep = np.flatnonzero(np.isfinite(values))
        values = values[keep]
        if stats is None:
            stats = fit_gaussian(values)
        return cls(
            flight_id, float(height_m), locations.take(keep), values, stats
        )

    def __len__(self) -> int:
        return int(self.w_db.size)

    @property
    def standardized(self) -> FloatArray:
        if self.stats.degenerate:
            raise DegenerateStd(
                f"flight {self.flight_id} has zero shadowing deviation"
            )
        return (self.w_db - self.stats.mean_db) / self.stats.std_db

    @property
    def centered(self) -> FloatArray:
        return self.w_db - self.stats.mean_db


def pooled_variance(series: Sequence[ShadowingSeries]) -> float:
    """Variance of shadowing after removing each flight's own mean."""
    centered = np.concatenate([s.centered for s in series])
    if centered.size < 2:
        raise TooFewSamples("not enough shadowing samples for a variance")
    return float(np.mean(centered ** 2))


@dataclasses.dataclass(frozen=True)
class CorrelationCurve:
    """Binned estimates against horizontal distance.

    ``values`` holds the unweighted mean over the contributing flights or
    flight pairs, ``counts`` the total number of pairs per bin.
    """

    bin_centers_m: FloatArray
    values: FloatArray
    counts: npt.NDArray[np.int64]

    def to_frame(self, value_name: str = "correlation") -> pd.DataFrame:
        return pd.DataFrame({
            "distance_m": self.bin_centers_m,
            value_name: self.values,
            "count": self.counts,
        })

    def __len__(self) -> int:
        return int(self.bin_centers_m.size)


def product_of(a: FloatArray, b: FloatArray) -> FloatArray:
    return a * b


def half_squared_difference(a: FloatArray, b: FloatArray) -> FloatArray:
    return 0.5 * (a - b) ** 2


@dataclasses.dataclass
class _BinSums:
    sums: FloatArray = dataclasses.field(
        default_factory=lambda: np.zeros(0)
    )
    counts: npt.NDArray[np.int64] = dataclasses.field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )

    def add(self, sums: FloatArray, counts: npt.NDArray[np.int64]) -> None:
        size = max(self.sums.size, sums.size)
        self.sums = np.pad(self.sums, (0, size - self.sums.size)) + np.pad(
            sums, (0, size - sums.size)
        )
        self.counts = np.pad(
            self.counts, (0, size - self.counts.size)
        ) + np.pad(counts, (0, size - counts.size))

    @property
    def means(self) -> FloatArray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / self.counts, np.nan)


def _block_sums(
    rows: Tuple[int, int],
    loc_a: geo.LocationArray,
    val_a: FloatArray,
    loc_b: geo.LocationArray,
    val_b: FloatArray,
    pair_value: PairFunction,
    bin_m: float,
    max_distance_m: Optional[float],
    upper_only: bool,
) -> Tuple[FloatArray, npt.NDArray[np.int64]]:
    start, stop = rows
    block = loc_a.take(np.arange(start, stop))
    distance = geo.pairwise_horizontal_distances(block, loc_b)
    keep = np.ones(distance.shape, dtype=bool)
    if upper_only:
        keep &= (
            np.arange(loc_b.lat_deg.size)[None, :]
            > np.arange(start, stop)[:, None]
        )
    if max_distance_m is not None:
        keep &= distance <= max_distance_m
    bins = np.floor(distance[keep] / bin_m).astype(np.int64)
    if bins.size == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    values = pair_value(val_a[start:stop, None], val_b[None, :])
    values = np.broadcast_to(values, distance.shape)[keep]
    return (
        np.bincount(bins, weights=values),
        np.bincount(bins).astype(np.int64),
    )


def binned_pair_sums(
    loc_a: geo.LocationArray,
    val_a: FloatArray,
    loc_b: Optional[geo.LocationArray] = None,
    val_b: Optional[FloatArray] = None,
    pair_value: PairFunction = product_of,
    bin_m: float = DEFAULT_BIN_M,
    max_distance_m: Optional[float] = None,
    threads: int = 1,
) -> _BinSums:
    """Sum ``pair_value`` over sample pairs, binned by horizontal distance.

    Without ``loc_b`` the pairs are the unordered pairs i < j within
    ``loc_a``; otherwise every (a, b) combination. Row blocks are merged in
    block order, so the result does not depend on ``threads``.
    """
    if bin_m <= 0:
        raise DataError("bin width must be positive")
    upper_only = loc_b is None
    if loc_b is None or val_b is None:
        loc_b, val_b = loc_a, val_a
    blocks = [
        (start, min(start + BLOCK_ROWS, len(loc_a)))
        for start in range(0, len(loc_a), BLOCK_ROWS)
    ]

    def work(rows: Tuple[int, int]) -> Tuple[FloatArray, npt.NDArray]:
        return _block_sums(
            rows, loc_a, val_a, loc_b, val_b, pair_value,
            bin_m, max_distance_m, upper_only,
        )

    totals = _BinSums()
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(threads) as executor:
            results = list(executor.map(work, blocks))
    else:
        results = [work(rows) for rows in blocks]
    for sums, counts in results:
        totals.add(sums, counts)
    return totals


def average_curves(
    per_group: Sequence[_BinSums], bin_m: float
) -> CorrelationCurve:
    """Average per-group bin means with equal weight per group.

    Bins empty in every group are dropped.
    """
    size = max((group.sums.size for group in per_group), default=0)
    means = np.full((len(per_group), size), np.nan)
    counts = np.zeros(size, dtype=np.int64)
    for row, group in enumerate(per_group):
        means[row, :group.sums.size] = group.means
        counts[:group.counts.size] += group.counts
    populated = np.flatnonzero(counts > 0)
    if populated.size == 0:
        raise EmptyBin("no sample pairs fell into any distance bin")
    if populated.size < size:
        logger.debug("Dropped %d empty bins", size - populated.size)
    with np.errstate(invalid="ignore"):
        values = np.nanmean(means[:, populated], axis=0)
    return CorrelationCurve(
        bin_centers_m=(populated + 0.5) * bin_m,
        values=values,
        counts=counts[populated],
    )


def horizontal_correlation(
    flights: Sequence[ShadowingSeries],
    bin_m: float = DEFAULT_BIN_M,
    max_distance_m: Optional[float] = None,
    threads: int = 1,
) -> CorrelationCurve:
    """Correlation against horizontal distance within flights.

    Every intra-flight pair is binned per flight and the per-flight bin
    averages are then averaged across flights.
    """
    if not flights:
        raise TooFewSamples("horizontal correlation needs at least 1 flight")
    per_flight = [
        binned_pair_sums(
            series.locations, series.standardized,
            bin_m=bin_m, max_distance_m=max_distance_m, threads=threads,
        )
        for series in sorted(flights, key=lambda s: (s.height_m, s.flight_id))
    ]
    return average_curves(per_flight, bin_m)


def _local_xy(
    origin: geo.GeoLocation, locations: geo.LocationArray
) -> FloatArray:
    return geo.local_coordinates(origin, locations)[:, :2]


def match_positions(
    a: ShadowingSeries,
    b: ShadowingSeries,
    dh_max: float = DEFAULT_VERTICAL_MATCH_M,
) -> Tuple[npt.NDArray[np.intp], npt.NDArray[np.intp]]:
    """Pair each sample of ``a`` with the nearest sample of ``b``.

    Pairs further apart than ``dh_max`` horizontally are discarded.
    """
    origin = a.locations[0].with_altitude(0.0)
    tree = cKDTree(_local_xy(origin, b.locations))
    _, nearest = tree.query(_local_xy(origin, a.locations), k=1)
    nearest = np.asarray(nearest, dtype=np.intp)
    d_h = geo.central_angle(
        a.locations.lat_deg, a.locations.lon_deg,
        b.locations.lat_deg[nearest], b.locations.lon_deg[nearest],
    ) * geo.EARTH_RADIUS_M
    keep = np.flatnonzero(d_h <= dh_max)
    return keep.astype(np.intp), nearest[keep]


@dataclasses.dataclass(frozen=True)
class VerticalCorrelation:
    heights_m: FloatArray
    matrix: FloatArray
    counts: npt.NDArray[np.int64]

    def to_frame(self) -> pd.DataFrame:
        labels = [f"{h:g}" for h in self.heights_m]
        frame = pd.DataFrame(self.matrix, columns=labels)
        frame.insert(0, "height_m", self.heights_m)
        return frame


def _ordered(flights: Sequence[ShadowingSeries]) -> List[ShadowingSeries]:
    return sorted(flights, key=lambda s: (s.height_m, s.flight_id))


def vertical_correlation(
    flights: Sequence[ShadowingSeries],
    dh_max: float = DEFAULT_VERTICAL_MATCH_M,
    min_pairs: int = MIN_VERTICAL_PAIRS,
) -> VerticalCorrelation:
    """Mean pair correlation of position-matched samples between flights."""
    ordered = _ordered(flights)
    n = len(ordered)
    matrix = np.zeros((n, n))
    counts = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i, n):
            a, b = ordered[i], ordered[j]
            idx_a, idx_b = match_positions(a, b, dh_max)
            if idx_a.size < min_pairs:
                raise NoOverlap(
                    f"flights {a.flight_id} and {b.flight_id} share only "
                    f"{idx_a.size} samples within {dh_max} m"
                )
            value = float(np.mean(
                a.standardized[idx_a] * b.standardized[idx_b]
            ))
            matrix[i, j] = matrix[j, i] = value
            counts[i, j] = counts[j, i] = idx_a.size
    return VerticalCorrelation(
        heights_m=np.array([s.height_m for s in ordered]),
        matrix=matrix,
        counts=counts,
    )


def vertical_profile(
    vertical: VerticalCorrelation,
) -> Tuple[FloatArray, FloatArray]:
    """Average the off-diagonal correlations per vertical separation."""
    heights = vertical.heights_m
    upper = np.triu_indices(heights.size, k=1)
    separations = np.round(np.abs(heights[upper[0]] - heights[upper[1]]), 6)
    values = vertical.matrix[upper]
    offsets = np.unique(separations)
    offsets = offsets[offsets > 0]
    means = np.array([values[separations == d].mean() for d in offsets])
    return offsets, means


def correlation_3d(
    flights: Sequence[ShadowingSeries],
    bin_m: float = DEFAULT_BIN_M,
    max_distance_m: Optional[float] = None,
    threads: int = 1,
) -> Dict[float, CorrelationCurve]:
    """Cross-flight correlation against horizontal distance per offset.

    Flight pairs sharing a vertical offset are averaged with equal weight.
    The zero offset is the intra-flight horizontal correlation.
    """
    ordered = _ordered(flights)
    groups: Dict[float, List[_BinSums]] = {}
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            offset = round(abs(b.height_m - a.height_m), 6)
            if offset == 0:
                continue
            groups.setdefault(offset, []).append(
                binned_pair_sums(
                    a.locations, a.standardized,
                    b.locations, b.standardized,
                    bin_m=bin_m, max_distance_m=max_distance_m,
                    threads=threads,
                )
            )
    curves = {
        0.0: horizontal_correlation(ordered, bin_m, max_distance_m, threads)
    }
    for offset in sorted(groups):
        curves[offset] = average_curves(groups[offset], bin_m)
    return curves


def empirical_semivariogram_horizontal(
    flights: Sequence[ShadowingSeries],
    bin_m: float = DEFAULT_BIN_M,
    max_distance_m: Optional[float] = None,
    threads: int = 1,
) -> CorrelationCurve:
    """Half mean squared difference of centered shadowing within flights."""
    per_flight = [
        binned_pair_sums(
            series.locations, series.centered,
            pair_value=half_squared_difference,
            bin_m=bin_m, max_distance_m=max_distance_m, threads=threads,
        )
        for series in _ordered(flights)
    ]
    return average_curves(per_flight, bin_m)


def empirical_semivariogram_vertical(
    flights: Sequence[ShadowingSeries],
    dh_max: float = DEFAULT_VERTICAL_MATCH_M,
    min_pairs: int = MIN_VERTICAL_PAIRS,
) -> CorrelationCurve:
    """Half mean squared difference of position-matched samples per offset."""
    ordered = _ordered(flights)
    sums: Dict[float, List[float]] = {}
    counts: Dict[float, int] = {}
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            idx_a, idx_b = match_positions(a, b, dh_max)
            if idx_a.size < min_pairs:
                raise NoOverlap(
                    f"flights {a.flight_id} and {b.flight_id} share only "
                    f"{idx_a.size} samples within {dh_max} m"
                )
            offset = round(abs(b.height_m - a.height_m), 6)
            value = float(np.mean(half_squared_difference(
                a.centered[idx_a], b.centered[idx_b]
            )))
            sums.setdefault(offset, []).append(value)
            counts[offset] = counts.get(offset, 0) + int(idx_a.size)
    if not sums:
        raise TooFewSamples("vertical semivariogram needs two flights")
    offsets = sorted(sums)
    return CorrelationCurve(
        bin_centers_m=np.array(offsets, dtype=float),
        values=np.array([np.mean(sums[d]) for d in offsets]),
        counts=np.array([counts[d] for d in offsets], dtype=np.int64),
    )


@dataclasses.dataclass(frozen=True)
class CorrelationModel3D:
    """Separable model: exponential in vertical offset times a
    bi-exponential mixture in horizontal distance."""

    a: float
    b1: float
    b2: float
    d_cor_m: float
    sigma_w2: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.a <= 1.0:
            raise DataError(f"mixture weight {self.a} outside [0, 1]")
        if not (self.b1 > 0 and self.b2 > 0):
            raise DataError("horizontal decay rates must be positive")
        if not self.d_cor_m > 0:
            raise DataError("correlation distance must be positive")
        if not self.sigma_w2 > 0:
            raise DataError("shadowing variance must be positive")

    def horizontal(self, d_h: npt.ArrayLike) -> FloatArray:
        d = np.asarray(d_h, dtype=float)
        return biexponential(d, self.a, self.b1, self.b2)

    def vertical(self, d_v: npt.ArrayLike) -> FloatArray:
        return np.exp(-np.asarray(d_v, dtype=float) / self.d_cor_m * LN2)


def biexponential(
    d: npt.ArrayLike, a: float, b1: float, b2: float
) -> FloatArray:
    """Mixture written with ``expm1`` so that it is exactly 1 at d = 0."""
    d = np.asarray(d, dtype=float)
    return 1.0 + a * np.expm1(-b1 * d) + (1.0 - a) * np.expm1(-b2 * d)


def eval_correlation_3d(
    model: CorrelationModel3D, d_v: npt.ArrayLike, d_h: npt.ArrayLike
) -> FloatArray:
    d_v = np.asarray(d_v, dtype=float)
    d_h = np.asarray(d_h, dtype=float)
    if np.any(d_v < 0) or np.any(d_h < 0):
        raise DataError("distances must be nonnegative")
    return model.vertical(d_v) * model.horizontal(d_h)


class BiExponentialFit(NamedTuple):
    a: float
    b1: float
    b2: float
    cost: float


def _fit_single_exponential(
    d: FloatArray, y: FloatArray, weights: FloatArray, scale: float
) -> Tuple[float, float]:
    def residuals(params: FloatArray) -> FloatArray:
        return weights * (scale * np.exp(-params[0] * d) - y)

    result = least_squares(
        residuals, x0=[0.1], bounds=([1e-9], [np.inf]),
        ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=10000,
    )
    return float(result.x[0]), float(result.cost)


def fit_biexponential(
    curve: CorrelationCurve,
    fixed_a: Optional[float] = None,
    scale: float = 1.0,
    n_starts: int = 10,
    seed: int = 0,
    min_bins: int = 5,
) -> BiExponentialFit:
    """Least-squares fit of the bi-exponential mixture to a binned curve.

    Residuals are weighted by the square root of the pair counts. ``scale``
    multiplies the model, which lets a fixed vertical factor be held while
    fitting the horizontal decay. With a free mixture weight the result is
    labelled so that ``b1 <= b2``, and a curve explained as well by one
    exponential is reported as ``a = 1, b1 = b2``.
    """
    if len(curve) < min_bins:
        raise TooFewSamples(
            f"need at least {min_bins} bins to fit, got {len(curve)}"
        )
    d = np.asarray(curve.bin_centers_m, dtype=float)
    y = np.asarray(curve.values, dtype=float)
    weights = np.sqrt(np.asarray(curve.counts, dtype=float))
    weights = weights / weights.max()

    def model(params: FloatArray) -> FloatArray:
        if fixed_a is None:
            a, b1, b2 = params
        else:
            a, (b1, b2) = fixed_a, params
        return scale * biexponential(d, a, b1, b2)

    def residuals(params: FloatArray) -> FloatArray:
        return weights * (model(params) - y)

    rng = np.random.default_rng(seed)
    starts = [[0.02, 0.2]] + [
        list(10.0 ** rng.uniform(-3.0, 0.0, size=2))
        for _ in range(max(n_starts - 1, 0))
    ]
    if fixed_a is None:
        lower, upper = [0.0, 1e-9, 1e-9], [1.0, np.inf, np.inf]
        starts = [[0.5] + s if k == 0 else [float(rng.uniform())] + s
                  for k, s in enumerate(starts)]
    else:
        lower, upper = [1e-9, 1e-9], [np.inf, np.inf]

    best = None
    for x0 in starts:
        try:
            result = least_squares(
                residuals, x0=x0, bounds=(lower, upper),
                ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=20000,
            )
        except ValueError as error:
            logger.debug("Fit from %s failed: %s", x0, error)
            continue
        if not np.all(np.isfinite(result.x)):
            continue
        if best is None or result.cost < best.cost:
            best = result
    if best is None:
        raise FitDiverged("bi-exponential fit failed from every start")

    if fixed_a is None:
        a, b1, b2 = (float(v) for v in best.x)
        if b1 > b2:
            a, b1, b2 = 1.0 - a, b2, b1
        single_b, single_cost = _fit_single_exponential(d, y, weights, scale)
        if single_cost <= best.cost * (1.0 + 1e-9) + 1e-30:
            return BiExponentialFit(1.0, single_b, single_b, single_cost)
        return BiExponentialFit(a, b1, b2, float(best.cost))
    b1, b2 = (float(v) for v in best.x)
    return BiExponentialFit(float(fixed_a), b1, b2, float(best.cost))


def fit_exponential_vertical(
    d_v: npt.ArrayLike,
    correlations: npt.ArrayLike,
    weights: Optional[npt.ArrayLike] = None,
) -> float:
    """Half-correlation distance of an exponential decay in vertical offset.

    A single offset suffices; its correlation must lie in (0, 1).
    """
    d = np.asarray(d_v, dtype=float)
    y = np.asarray(correlations, dtype=float)
    if d.size < 1 or np.unique(d[d > 0]).size < 1:
        raise TooFewSamples("need at least one positive vertical distance")
    w = np.ones_like(d) if weights is None else np.asarray(weights, float)

    usable = (y > 0) & (y < 1) & (d > 0)
    if np.any(usable):
        x0 = float(np.median(d[usable] * LN2 / -np.log(y[usable])))
    else:
        x0 = 10.0

    def residuals(params: FloatArray) -> FloatArray:
        return w * (np.exp(-d / params[0] * LN2) - y)

    result = least_squares(
        residuals, x0=[x0], bounds=([1e-6], [np.inf]),
        ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=10000,
    )
    d_cor = float(result.x[0])
    if not (result.success and np.isfinite(d_cor)):
        raise FitDiverged(f"vertical decay fit failed: {result.message}")
    return d_cor


@dataclasses.dataclass(frozen=True)
class OffsetFit:
    d_v_m: float
    a: float
    b1: float
    b2: float


def fit_per_offset(
    curves: Dict[float, CorrelationCurve],
    d_cor_m: float,
    a: float = DEFAULT_MIXTURE_WEIGHT,
    seed: int = 0,
) -> List[OffsetFit]:
    """Refit the horizontal decay rates for every vertical offset.

    The mixture weight stays at ``a`` and the vertical factor at its value
    for ``d_cor_m``.
    """
    fits = []
    for offset in sorted(curves):
        factor = float(np.exp(-offset / d_cor_m * LN2))
        try:
            fit = fit_biexponential(
                curves[offset], fixed_a=a, scale=factor, seed=seed
            )
        except (TooFewSamples, FitDiverged) as error:
            logger.warning("Skipping offset %g m: %s", offset, error)
            continue
        fits.append(OffsetFit(offset, fit.a, fit.b1, fit.b2))
    return fits
