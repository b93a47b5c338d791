"""JSON reports and CSV tables written by the pipeline stages."""
from __future__ import annotations

import abc
import dataclasses
import enum
import json
import logging
import math
import pathlib
from typing import (
    Any,
    Dict,
    Generic,
    Iterable,
    List,
    Optional,
    Tuple,
    Type,
    TypeVar,
)

import numpy as np
import pandas as pd

from aerial_radio_map import utils
from aerial_radio_map.defaults import CSV_FLOAT_FORMAT, MANIFEST_FILE_NAME
from aerial_radio_map.fitting import SetupFit
from aerial_radio_map.kriging import GridSpec
from aerial_radio_map.spatial_stats import (
    CorrelationModel3D,
    OffsetFit,
    ShadowingStats,
)

logger = logging.getLogger(__name__)

R = TypeVar('R')
DataType = TypeVar('DataType')


def plain(value: Any) -> Any:
    """Convert numpy, enum and path values to JSON types; NaN becomes null."""
    if isinstance(value, dict):
        return {str(key): plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.generic):
        return plain(value.item())
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, pathlib.PurePath):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclasses.dataclass(frozen=True)
class Provenance:
    tool_version: str
    config_hash: str
    seed: int
    input_digests: Dict[str, str] = dataclasses.field(default_factory=dict)

    @classmethod
    def create(
        cls,
        config_hash: str,
        seed: int,
        inputs: Iterable[pathlib.Path] = (),
    ) -> Provenance:
        return cls(
            tool_version=utils.get_tool_version(),
            config_hash=config_hash,
            seed=seed,
            input_digests={
                pathlib.Path(path).name: utils.file_digest(path)
                for path in inputs
            },
        )


class AbsReportGenerator(
    abc.ABC,
    Generic[DataType],
    metaclass=utils.MetaClassWithAbstractClassAttrs
):
    """Serializes a report dataclass to deterministic JSON.

    Keys are sorted and no timestamps are written, so identical inputs give
    byte-identical files.
    """

    ReportDataClass: Type[DataType] = utils.abstract_attribute()
    file_name: str = utils.abstract_attribute()
    key_mapping: Dict[str, str] = {}

    def __init__(self, data: DataType) -> None:
        self.data = data

    @classmethod
    def map_data(cls, fields: List[Tuple[str, R]]) -> Dict[str, R]:
        def mapping(key: str, value: R) -> Tuple[str, R]:
            if key in cls.key_mapping:
                return cls.key_mapping[key], value
            return key, value
        return dict(map(lambda field: mapping(*field), fields))

    def document(self) -> Dict[str, Any]:
        return plain(
            dataclasses.asdict(self.data, dict_factory=self.map_data)
        )

    def generate(self) -> str:
        return json.dumps(self.document(), sort_keys=True, indent=2) + "\n"

    def write(self, out_dir: pathlib.Path) -> pathlib.Path:
        path = pathlib.Path(out_dir) / self.file_name
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.generate())
        logger.debug("Wrote %s", path)
        return path


@dataclasses.dataclass(frozen=True)
class PathLossFitReport:
    provenance: Provenance
    epsilon0: float
    fitted_epsilon0: Optional[float]
    best_setup: Optional[str]
    best_pathloss_model: Optional[str]
    setups: List[SetupFit]


class PathLossFitReportGenerator(AbsReportGenerator[PathLossFitReport]):
    ReportDataClass = PathLossFitReport
    file_name = "pathloss_fit.json"


@dataclasses.dataclass(frozen=True)
class ShadowingStatsReport:
    provenance: Provenance
    pathloss_model: str
    n_samples: int
    flagged_samples: int
    pooled_variance_db2: float
    pooled: ShadowingStats
    per_height: Dict[str, ShadowingStats]


class ShadowingStatsReportGenerator(
    AbsReportGenerator[ShadowingStatsReport]
):
    ReportDataClass = ShadowingStatsReport
    file_name = "shadowing_stats.json"
    key_mapping = {"n_samples": "samples"}


@dataclasses.dataclass(frozen=True)
class CorrelationModelReport:
    provenance: Provenance
    model: CorrelationModel3D
    horizontal_fit_cost: float
    vertical_offsets_m: List[float]
    vertical_mean_correlation: List[float]
    per_offset: List[OffsetFit]


class CorrelationModelReportGenerator(
    AbsReportGenerator[CorrelationModelReport]
):
    ReportDataClass = CorrelationModelReport
    file_name = "correlation_model.json"


@dataclasses.dataclass(frozen=True)
class VariogramReport:
    provenance: Provenance
    source: str
    variogram: Dict[str, float]


class VariogramReportGenerator(AbsReportGenerator[VariogramReport]):
    ReportDataClass = VariogramReport
    file_name = "variogram.json"


@dataclasses.dataclass(frozen=True)
class XvalReport:
    provenance: Provenance
    mode: str
    target_height_m: float
    baseline_rmse_db: float
    exclude_training: bool
    runs: List[Dict[str, Any]]


class XvalReportGenerator(AbsReportGenerator[XvalReport]):
    ReportDataClass = XvalReport
    file_name = "xval_summary.json"


@dataclasses.dataclass(frozen=True)
class RadioMapReport:
    provenance: Provenance
    grid: GridSpec
    mode: str
    m_max: int
    r0_m: float
    pool_size: int
    nodes: int
    fallback_nodes: int
    variogram: Dict[str, float]


class RadioMapReportGenerator(AbsReportGenerator[RadioMapReport]):
    ReportDataClass = RadioMapReport
    file_name = "radio_map.json"


@dataclasses.dataclass(frozen=True)
class SyntheticScenarioReport:
    provenance: Provenance
    base_station: Dict[str, float]
    trajectory: Dict[str, Any]
    model: CorrelationModel3D
    pathloss_model: str
    mean_offsets_db: Dict[str, float]
    shadowing_enabled: bool
    flights: List[str]
    n_samples: int


class SyntheticScenarioReportGenerator(
    AbsReportGenerator[SyntheticScenarioReport]
):
    ReportDataClass = SyntheticScenarioReport
    file_name = "synthetic_scenario.json"
    key_mapping = {"n_samples": "samples"}


@dataclasses.dataclass(frozen=True)
class Manifest:
    provenance: Provenance
    stages: List[str]
    artifacts: Dict[str, str]


class ManifestGenerator(AbsReportGenerator[Manifest]):
    ReportDataClass = Manifest
    file_name = MANIFEST_FILE_NAME
    key_mapping = {"artifacts": "artifact_sha256"}


def write_frame(frame: pd.DataFrame, path: pathlib.Path) -> pathlib.Path:
    """Write a table as UTF-8 CSV with a header row and ``\\n`` endings."""
    frame.to_csv(
        path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n",
        encoding="utf-8",
    )
    logger.debug("Wrote %d rows to %s", len(frame), path)
    return pathlib.Path(path)


def write_manifest(
    out_dir: pathlib.Path,
    artifacts: Iterable[pathlib.Path],
    stages: List[str],
    provenance: Provenance,
) -> pathlib.Path:
    """List every artifact with its sha256 digest."""
    digests = {
        pathlib.Path(path).name: utils.file_digest(path)
        for path in artifacts
    }
    return ManifestGenerator(
        Manifest(provenance=provenance, stages=stages, artifacts=digests)
    ).write(out_dir)
