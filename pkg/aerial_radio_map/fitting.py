"""Path-loss fitting errors across antenna patterns and models."""
from __future__ import annotations

import dataclasses
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd

from aerial_radio_map import antenna, geo
from aerial_radio_map.exceptions import DataError, TooFewSamples
from aerial_radio_map.measurements import MeasurementSet
from aerial_radio_map.propagation import (
    PathLossModel,
    PropagationConfig,
    predicted_rsrp_flagged,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

CDF_LEVELS = tuple(float(level) for level in np.linspace(0.0, 1.0, 21))


@dataclasses.dataclass(frozen=True)
class ErrorStats:
    n_samples: int
    mean_db: float
    std_db: float
    rmse_db: float
    cdf_levels: Tuple[float, ...]
    cdf_errors_db: Tuple[float, ...]


def error_statistics(errors: npt.ArrayLike) -> ErrorStats:
    """Summary and empirical CDF of finite fitting errors."""
    values = np.asarray(errors, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise TooFewSamples("no usable fitting errors")
    return ErrorStats(
        n_samples=int(values.size),
        mean_db=float(values.mean()),
        std_db=float(values.std()),
        rmse_db=float(np.sqrt(np.mean(values ** 2))),
        cdf_levels=CDF_LEVELS,
        cdf_errors_db=tuple(
            float(q) for q in np.quantile(values, CDF_LEVELS)
        ),
    )


@dataclasses.dataclass(frozen=True)
class PatternSetup:
    name: str
    bs_pattern: antenna.AntennaPattern
    uav_pattern: antenna.AntennaPattern


def pattern_setups(
    names: Sequence[str],
    configured_bs: antenna.AntennaPattern,
    configured_uav: antenna.AntennaPattern,
) -> List[PatternSetup]:
    """Antenna setups to compare; ``configured`` keeps the run's patterns.

    The other setups use the same pattern at both ends of the link.
    """
    setups = []
    for name in names:
        if name == "configured":
            setups.append(PatternSetup(name, configured_bs, configured_uav))
        else:
            pattern = antenna.build_pattern(name)
            setups.append(PatternSetup(name, pattern, pattern))
    return setups


def fitting_errors(
    cfg: PropagationConfig,
    bs: geo.GeoLocation,
    samples: MeasurementSet,
    model: PathLossModel,
) -> FloatArray:
    """Predicted minus measured power; NaN where the link is unusable."""
    predicted, _ = predicted_rsrp_flagged(cfg, bs, samples.locations, model)
    return predicted - np.asarray(samples.rsrp_dbm, dtype=float)


def error_by_distance(
    errors: npt.ArrayLike, d_3d: npt.ArrayLike, bin_m: float
) -> pd.DataFrame:
    """Fitting error statistics in bins of 3D link distance."""
    if not bin_m > 0:
        raise DataError("distance bin must be positive")
    values = np.asarray(errors, dtype=float)
    distance = np.asarray(d_3d, dtype=float)
    keep = np.isfinite(values)
    frame = pd.DataFrame({
        "bin": np.floor(distance[keep] / bin_m).astype(np.int64),
        "error": values[keep],
    })
    if frame.empty:
        return pd.DataFrame(columns=[
            "distance_m", "count", "mean_error_db", "std_error_db", "rmse_db"
        ])
    grouped = frame.groupby("bin")["error"]
    table = pd.DataFrame({
        "count": grouped.size(),
        "mean_error_db": grouped.mean(),
        "std_error_db": grouped.std(ddof=0),
        "rmse_db": grouped.apply(lambda e: float(np.sqrt(np.mean(e ** 2)))),
    }).reset_index()
    table.insert(0, "distance_m", (table.pop("bin") + 0.5) * bin_m)
    return table


@dataclasses.dataclass(frozen=True)
class SetupFit:
    setup: str
    pathloss_model: str
    bs_pattern: Dict[str, object]
    uav_pattern: Dict[str, object]
    overall: ErrorStats
    per_height: Dict[str, ErrorStats]


def _height_key(height_m: float) -> str:
    return f"{height_m:g}"


def compare_setups(
    cfg: PropagationConfig,
    bs: geo.GeoLocation,
    samples: MeasurementSet,
    setups: Sequence[PatternSetup],
    models: Sequence[PathLossModel] = tuple(PathLossModel),
    distance_bin_m: float = 50.0,
) -> Tuple[List[SetupFit], pd.DataFrame]:
    """Fitting errors for every antenna setup and path-loss model.

    Returns the per-setup summaries and a long table of errors binned by 3D
    distance for each setup, model and height.
    """
    _, _, d_3d = geo.distances_3d(bs, samples.locations)
    heights = np.asarray(samples.height_label_m, dtype=float)
    fits: List[SetupFit] = []
    tables: List[pd.DataFrame] = []
    for setup in setups:
        trial = dataclasses.replace(
            cfg, bs_pattern=setup.bs_pattern, uav_pattern=setup.uav_pattern
        )
        for model in models:
            errors = fitting_errors(trial, bs, samples, model)
            per_height: Dict[str, ErrorStats] = {}
            for height in np.unique(heights):
                rows = heights == height
                per_height[_height_key(height)] = error_statistics(
                    errors[rows]
                )
                table = error_by_distance(
                    errors[rows], d_3d[rows], distance_bin_m
                )
                table.insert(0, "height_m", float(height))
                table.insert(0, "pathloss_model", model.value)
                table.insert(0, "setup", setup.name)
                tables.append(table)
            overall = error_statistics(errors)
            logger.info(
                "Fit %s/%s: RMSE %.2f dB over %d samples",
                setup.name, model.value, overall.rmse_db, overall.n_samples
            )
            fits.append(
                SetupFit(
                    setup=setup.name,
                    pathloss_model=model.value,
                    bs_pattern=antenna.describe(setup.bs_pattern),
                    uav_pattern=antenna.describe(setup.uav_pattern),
                    overall=overall,
                    per_height=per_height,
                )
            )
    return fits, pd.concat(tables, ignore_index=True)


def best_setup(fits: Sequence[SetupFit]) -> Optional[SetupFit]:
    """The setup and model with the lowest overall RMSE."""
    if not fits:
        return None
    return min(fits, key=lambda fit: fit.overall.rmse_db)
