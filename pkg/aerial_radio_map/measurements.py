"""Measurement sets, CSV ingestion and calibration corrections."""
from __future__ import annotations

import dataclasses
import enum
import logging
import pathlib
from typing import Dict, Iterable, List, Optional

import numpy as np
import numpy.typing as npt
import pandas as pd

from aerial_radio_map import geo
from aerial_radio_map.defaults import (
    CSV_FLOAT_FORMAT,
    DEFAULT_POWER_OFFSET_DB,
    DEFAULT_TRIM_TOLERANCE_M,
    MEASUREMENT_COLUMNS,
    RSRP_RANGE_DBM,
    TRUTH_COLUMNS,
)
from aerial_radio_map.exceptions import (
    CalibrationError,
    DataError,
    NonMonotonicTime,
    SchemaError,
    TooFewSamples,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


class DriftCorrection(enum.Enum):
    NONE = "none"
    LINEAR = "linear"


@dataclasses.dataclass(frozen=True)
class CalibrationSpec:
    power_offset_db: float = DEFAULT_POWER_OFFSET_DB
    altitude_drift_correction: DriftCorrection = DriftCorrection.LINEAR
    trim_takeoff_landing: bool = True
    trim_tolerance_m: float = DEFAULT_TRIM_TOLERANCE_M

    def __post_init__(self) -> None:
        if not np.isfinite(self.power_offset_db):
            raise DataError("power offset must be finite")
        if self.trim_tolerance_m <= 0:
            raise DataError("trim tolerance must be positive")

    @classmethod
    def identity(cls) -> CalibrationSpec:
        """Spec that leaves already calibrated data untouched."""
        return cls(
            power_offset_db=0.0,
            altitude_drift_correction=DriftCorrection.NONE,
            trim_takeoff_landing=False,
        )

    @property
    def is_identity(self) -> bool:
        return (
            self.power_offset_db == 0.0
            and self.altitude_drift_correction is DriftCorrection.NONE
            and not self.trim_takeoff_landing
        )


@dataclasses.dataclass
class MeasurementSet:
    """Time ordered samples from one or more flights, stored by column."""

    t_s: FloatArray
    lat_deg: FloatArray
    lon_deg: FloatArray
    alt_m: FloatArray
    rsrp_dbm: FloatArray
    flight_id: npt.NDArray[np.object_]
    height_label_m: FloatArray
    sample_id: npt.NDArray[np.int64]
    calibrated: bool = False
    true_pl_db: Optional[FloatArray] = None
    true_w_db: Optional[FloatArray] = None

    def __post_init__(self) -> None:
        n = len(self.t_s)
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if isinstance(value, np.ndarray) and len(value) != n:
                raise DataError(
                    f"column {field.name} has {len(value)} rows, "
                    f"expected {n}"
                )

    def __len__(self) -> int:
        return len(self.t_s)

    @property
    def locations(self) -> geo.LocationArray:
        return geo.LocationArray(self.lat_deg, self.lon_deg, self.alt_m)

    @property
    def has_truth(self) -> bool:
        return self.true_pl_db is not None and self.true_w_db is not None

    def subset(self, indices: npt.ArrayLike) -> MeasurementSet:
        idx = np.asarray(indices)
        return MeasurementSet(
            **{
                field.name: (
                    value[idx] if isinstance(value, np.ndarray) else value
                )
                for field in dataclasses.fields(self)
                for value in [getattr(self, field.name)]
            }
        )

    def flight_ids(self) -> List[str]:
        """Flight identifiers in order of first appearance."""
        _, first = np.unique(self.flight_id.astype(str), return_index=True)
        return [str(self.flight_id[i]) for i in sorted(first)]

    def flights(self) -> Dict[str, MeasurementSet]:
        return {
            flight: self.subset(np.flatnonzero(self.flight_id == flight))
            for flight in self.flight_ids()
        }

    def flight_height(self) -> float:
        heights = np.unique(self.height_label_m)
        if heights.size != 1:
            raise DataError("measurement set spans several flight heights")
        return float(heights[0])

    @classmethod
    def concat(cls, sets: Iterable[MeasurementSet]) -> MeasurementSet:
        """Join sets, renumbering sample ids so they stay unique."""
        items = list(sets)
        if not items:
            raise TooFewSamples("no measurement sets to join")
        if len({item.calibrated for item in items}) != 1:
            raise CalibrationError(
                "cannot mix calibrated and uncalibrated measurements"
            )
        truth = all(item.has_truth for item in items)
        offsets = np.cumsum([0] + [len(item) for item in items[:-1]])

        def join(name: str) -> FloatArray:
            return np.concatenate([getattr(item, name) for item in items])

        return cls(
            t_s=join("t_s"),
            lat_deg=join("lat_deg"),
            lon_deg=join("lon_deg"),
            alt_m=join("alt_m"),
            rsrp_dbm=join("rsrp_dbm"),
            flight_id=np.concatenate([item.flight_id for item in items]),
            height_label_m=join("height_label_m"),
            sample_id=np.concatenate([
                np.arange(len(item), dtype=np.int64) + offset
                for item, offset in zip(items, offsets)
            ]),
            calibrated=items[0].calibrated,
            true_pl_db=join("true_pl_db") if truth else None,
            true_w_db=join("true_w_db") if truth else None,
        )

    def to_frame(self, include_truth: bool = False) -> pd.DataFrame:
        data: Dict[str, object] = {
            "t_s": self.t_s,
            "lat_deg": self.lat_deg,
            "lon_deg": self.lon_deg,
            "alt_m": self.alt_m,
            "rsrp_dbm": self.rsrp_dbm,
            "flight_id": self.flight_id,
            "height_label_m": self.height_label_m,
            "calibrated": np.full(len(self), int(self.calibrated)),
        }
        if include_truth:
            if not self.has_truth:
                raise DataError("measurement set carries no truth columns")
            data["true_pl_db"] = self.true_pl_db
            data["true_w_db"] = self.true_w_db
        return pd.DataFrame(data)


def write_measurements(
    samples: MeasurementSet,
    path: pathlib.Path,
    include_truth: bool = False,
) -> pathlib.Path:
    samples.to_frame(include_truth=include_truth).to_csv(
        path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n"
    )
    logger.debug("Wrote %d samples to %s", len(samples), path)
    return path


def _numeric_column(frame: pd.DataFrame, name: str) -> FloatArray:
    values = pd.to_numeric(frame[name], errors="coerce")
    bad = np.flatnonzero(values.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise SchemaError(
            f"invalid {name} value {frame[name].iloc[row]!r}", line=row + 2
        )
    return values.to_numpy(dtype=float)


def _read_frame(path: pathlib.Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, encoding="utf-8"
        )
    except pd.errors.ParserError as error:
        raise SchemaError(f"unable to parse {path}: {error}") from error
    except pd.errors.EmptyDataError as error:
        raise SchemaError(f"{path} is empty", line=1) from error
    missing = [c for c in MEASUREMENT_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(
            f"{path} is missing columns: {', '.join(missing)}", line=1
        )
    return frame


def correct_altitude_drift(t_s: FloatArray, alt_m: FloatArray) -> FloatArray:
    """Remove a drift that grows linearly in time.

    The correction is zero at the first sample and makes the last altitude
    equal the first.
    """
    duration = t_s[-1] - t_s[0]
    if len(alt_m) < 2 or duration <= 0:
        return alt_m.copy()
    drift = alt_m[-1] - alt_m[0]
    return alt_m - drift * (t_s - t_s[0]) / duration


def modal_altitude(alt_m: FloatArray) -> float:
    values, counts = np.unique(np.round(alt_m), return_counts=True)
    return float(values[np.argmax(counts)])


def fixed_leg_mask(alt_m: FloatArray, tolerance_m: float) -> npt.NDArray:
    """Samples within ``tolerance_m`` of the modal flight altitude."""
    return np.abs(alt_m - modal_altitude(alt_m)) <= tolerance_m


def load_measurements(
    path: pathlib.Path,
    cal: CalibrationSpec,
    flight_id: Optional[str] = None,
    height_label_m: Optional[float] = None,
) -> MeasurementSet:
    """Read one flight from CSV and apply the calibration corrections."""
    path = pathlib.Path(path)
    frame = _read_frame(path)
    if len(frame) < 1:
        raise TooFewSamples(f"{path} holds no samples")

    columns = {name: _numeric_column(frame, name)
               for name in MEASUREMENT_COLUMNS}
    t_s = columns["t_s"]
    backwards = np.flatnonzero(np.diff(t_s) <= 0)
    if backwards.size:
        raise NonMonotonicTime(
            f"{path} line {int(backwards[0]) + 3}: time does not increase"
        )

    already_calibrated = bool(
        "calibrated" in frame.columns
        and (_numeric_column(frame, "calibrated") != 0).any()
    )
    if already_calibrated and not cal.is_identity:
        raise CalibrationError(
            f"{path} is already calibrated; refusing to apply "
            f"calibration again"
        )

    rsrp = columns["rsrp_dbm"] + cal.power_offset_db
    alt = columns["alt_m"]
    if cal.altitude_drift_correction is DriftCorrection.LINEAR:
        alt = correct_altitude_drift(t_s, alt)
        logger.debug(
            "Removed %.3f m altitude drift from %s",
            columns["alt_m"][-1] - columns["alt_m"][0], path
        )

    keep = np.ones(len(t_s), dtype=bool)
    if cal.trim_takeoff_landing:
        keep = fixed_leg_mask(alt, cal.trim_tolerance_m)
        logger.info(
            "Trimmed %d take-off/landing samples from %s",
            int((~keep).sum()), path
        )

    low, high = RSRP_RANGE_DBM
    out_of_range = np.flatnonzero(keep & ((rsrp < low) | (rsrp > high)))
    if out_of_range.size:
        row = int(out_of_range[0])
        raise SchemaError(
            f"calibrated RSRP {rsrp[row]:.2f} dBm outside "
            f"[{low}, {high}]",
            line=row + 2,
        )

    if height_label_m is None:
        if "height_label_m" in frame.columns:
            labels = _numeric_column(frame, "height_label_m")
        else:
            labels = np.full(len(t_s), modal_altitude(alt))
    else:
        labels = np.full(len(t_s), float(height_label_m))

    if flight_id is None:
        flights = (
            frame["flight_id"].to_numpy(dtype=object)
            if "flight_id" in frame.columns
            else np.full(len(t_s), path.stem, dtype=object)
        )
    else:
        flights = np.full(len(t_s), flight_id, dtype=object)

    truth = all(name in frame.columns for name in TRUTH_COLUMNS)
    idx = np.flatnonzero(keep)
    samples = MeasurementSet(
        t_s=t_s[idx],
        lat_deg=columns["lat_deg"][idx],
        lon_deg=columns["lon_deg"][idx],
        alt_m=alt[idx],
        rsrp_dbm=rsrp[idx],
        flight_id=flights[idx],
        height_label_m=labels[idx],
        sample_id=idx.astype(np.int64),
        calibrated=True,
        true_pl_db=_numeric_column(frame, "true_pl_db")[idx]
        if truth else None,
        true_w_db=_numeric_column(frame, "true_w_db")[idx]
        if truth else None,
    )
    logger.info("Loaded %d samples from %s", len(samples), path)
    return samples


def read_locations(path: pathlib.Path) -> geo.LocationArray:
    """Read target locations (``lat_deg,lon_deg,alt_m``) from CSV."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    for name in ("lat_deg", "lon_deg", "alt_m"):
        if name not in frame.columns:
            raise SchemaError(f"{path} is missing column {name}", line=1)
    return geo.LocationArray(
        _numeric_column(frame, "lat_deg"),
        _numeric_column(frame, "lon_deg"),
        _numeric_column(frame, "alt_m"),
    )
