"""Run configuration read from a TOML document."""
from __future__ import annotations

import dataclasses
import logging
import os
import pathlib
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import (
    Any,
    BinaryIO,
    Callable,
    Dict,
    List,
    Mapping,
    Optional,
    Tuple,
    Type,
    TypeVar,
)

from aerial_radio_map import antenna, geo, utils
from aerial_radio_map.defaults import (
    DEFAULT_B1_PER_M,
    DEFAULT_B2_PER_M,
    DEFAULT_BIN_M,
    DEFAULT_BS_HEIGHT_M,
    DEFAULT_CARRIER_HZ,
    DEFAULT_D_COR_M,
    DEFAULT_EPSILON0,
    DEFAULT_HEIGHTS_M,
    DEFAULT_M_MAX,
    DEFAULT_MIXTURE_WEIGHT,
    DEFAULT_N0,
    DEFAULT_POWER_OFFSET_DB,
    DEFAULT_R0_M,
    DEFAULT_SAMPLE_SPACING_M,
    DEFAULT_SIGMA_W_DB,
    DEFAULT_TRIM_TOLERANCE_M,
    DEFAULT_TX_POWER_DBM,
    DEFAULT_VERTICAL_MATCH_M,
    DEFAULT_XVAL_ITERATIONS,
    MIN_VERTICAL_PAIRS,
)
from aerial_radio_map.exceptions import ConfigError, DataError
from aerial_radio_map.kriging import KrigingMode
from aerial_radio_map.measurements import CalibrationSpec, DriftCorrection
from aerial_radio_map.propagation import (
    AngleMask,
    PathLossModel,
    PropagationConfig,
)
from aerial_radio_map.spatial_stats import CorrelationModel3D

logger = logging.getLogger(__name__)

PUBLIC_STAGES = (
    "synth", "fit", "shadowing", "correlate", "variogram", "krige", "xval",
    "map",
)

SectionType = TypeVar("SectionType")


def _choice(
    section: str, key: str, value: str, options: Tuple[str, ...]
) -> None:
    if value not in options:
        raise ConfigError(
            f"[{section}] {key} = {value!r}, expected one of "
            f"{', '.join(options)}"
        )


def _pair(
    section: str, key: str, value: Any
) -> Optional[Tuple[float, float]]:
    if value is None:
        return None
    if len(value) != 2 or float(value[0]) > float(value[1]):
        raise ConfigError(f"[{section}] {key} must be [low, high]")
    return float(value[0]), float(value[1])


@dataclasses.dataclass(frozen=True)
class PipelineSection:
    stages: Tuple[str, ...] = (
        "fit", "shadowing", "correlate", "variogram", "xval", "map",
    )
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        for stage in self.stages:
            _choice("pipeline", "stages", stage, PUBLIC_STAGES)
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("[pipeline] seed must be an unsigned 64 bit int")
        if self.threads < 1:
            raise ConfigError("[pipeline] threads must be positive")


@dataclasses.dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"

    def __post_init__(self) -> None:
        _choice("data", "source", self.source, ("files", "synthetic"))


@dataclasses.dataclass(frozen=True)
class FlightEntry:
    path: pathlib.Path
    height_m: Optional[float] = None
    flight_id: Optional[str] = None


@dataclasses.dataclass(frozen=True)
class CalibrationSection:
    power_offset_db: float = DEFAULT_POWER_OFFSET_DB
    altitude_drift_correction: str = "linear"
    trim_takeoff_landing: bool = True
    trim_tolerance_m: float = DEFAULT_TRIM_TOLERANCE_M

    def __post_init__(self) -> None:
        _choice(
            "calibration", "altitude_drift_correction",
            self.altitude_drift_correction,
            tuple(item.value for item in DriftCorrection),
        )

    def spec(self) -> CalibrationSpec:
        return CalibrationSpec(
            power_offset_db=float(self.power_offset_db),
            altitude_drift_correction=DriftCorrection(
                self.altitude_drift_correction
            ),
            trim_takeoff_landing=bool(self.trim_takeoff_landing),
            trim_tolerance_m=float(self.trim_tolerance_m),
        )


@dataclasses.dataclass(frozen=True)
class BaseStationSection:
    lat_deg: float = 35.7275
    lon_deg: float = -78.6960
    height_m: float = DEFAULT_BS_HEIGHT_M

    def location(self) -> geo.GeoLocation:
        return geo.GeoLocation(
            float(self.lat_deg), float(self.lon_deg), float(self.height_m)
        )


@dataclasses.dataclass(frozen=True)
class PropagationSection:
    carrier_hz: float = DEFAULT_CARRIER_HZ
    tx_power_dbm: float = DEFAULT_TX_POWER_DBM
    epsilon0: float = DEFAULT_EPSILON0
    model: str = PathLossModel.TWO_RAY.value
    los_elevation_deg: Optional[Tuple[float, float]] = None
    reflection_deg: Optional[Tuple[float, float]] = None

    def __post_init__(self) -> None:
        _choice(
            "propagation", "model", self.model,
            tuple(item.value for item in PathLossModel),
        )
        for key in ("los_elevation_deg", "reflection_deg"):
            object.__setattr__(
                self, key, _pair("propagation", key, getattr(self, key))
            )

    @property
    def pathloss_model(self) -> PathLossModel:
        return PathLossModel(self.model)

    def angle_mask(self) -> Optional[AngleMask]:
        if self.los_elevation_deg is None and self.reflection_deg is None:
            return None
        return AngleMask(self.los_elevation_deg, self.reflection_deg)


@dataclasses.dataclass(frozen=True)
class AntennaSection:
    kind: str = "isotropic"
    path: Optional[pathlib.Path] = None
    gain_dbi: float = 0.0

    def __post_init__(self) -> None:
        _choice(
            "antenna", "kind", self.kind,
            tuple(antenna.pattern_factories),
        )
        if self.kind == "measured" and self.path is None:
            raise ConfigError("measured antenna pattern needs a path")

    def build(self) -> antenna.AntennaPattern:
        return antenna.build_pattern(self.kind, self.path, self.gain_dbi)


@dataclasses.dataclass(frozen=True)
class FitSection:
    compare_patterns: Tuple[str, ...] = (
        "configured", "dipole", "isotropic",
    )
    fit_permittivity: bool = False
    distance_bin_m: float = 50.0

    def __post_init__(self) -> None:
        for setup in self.compare_patterns:
            _choice(
                "fit", "compare_patterns", setup,
                ("configured", "dipole", "isotropic"),
            )
        if not self.distance_bin_m > 0:
            raise ConfigError("[fit] distance_bin_m must be positive")


@dataclasses.dataclass(frozen=True)
class CorrelationSection:
    bin_m: float = DEFAULT_BIN_M
    max_distance_m: Optional[float] = 200.0
    vertical_match_m: float = DEFAULT_VERTICAL_MATCH_M
    a: float = DEFAULT_MIXTURE_WEIGHT
    min_pairs: int = MIN_VERTICAL_PAIRS
    fit_starts: int = 10

    def __post_init__(self) -> None:
        if not self.bin_m > 0:
            raise ConfigError("[correlation] bin_m must be positive")
        if self.max_distance_m is not None and not self.max_distance_m > 0:
            raise ConfigError("[correlation] max_distance_m must be positive")
        if not self.vertical_match_m > 0:
            raise ConfigError(
                "[correlation] vertical_match_m must be positive"
            )


@dataclasses.dataclass(frozen=True)
class ModelSection:
    source: str = "estimate"
    a: float = DEFAULT_MIXTURE_WEIGHT
    b1: float = DEFAULT_B1_PER_M
    b2: float = DEFAULT_B2_PER_M
    d_cor_m: float = DEFAULT_D_COR_M
    sigma_w2: float = DEFAULT_SIGMA_W_DB ** 2

    def __post_init__(self) -> None:
        _choice("model", "source", self.source, ("estimate", "config"))
        try:
            self.correlation_model()
        except DataError as error:
            raise ConfigError(f"[model] {error}") from error

    def correlation_model(self) -> CorrelationModel3D:
        return CorrelationModel3D(
            a=float(self.a), b1=float(self.b1), b2=float(self.b2),
            d_cor_m=float(self.d_cor_m), sigma_w2=float(self.sigma_w2),
        )


@dataclasses.dataclass(frozen=True)
class KrigingSection:
    r0_m: float = DEFAULT_R0_M
    m_max: int = DEFAULT_M_MAX
    nugget: float = 0.0
    mode: str = KrigingMode.RSRP.value
    targets: Optional[pathlib.Path] = None
    pool_heights_m: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        _choice(
            "kriging", "mode", self.mode,
            tuple(item.value for item in KrigingMode),
        )

    @property
    def kriging_mode(self) -> KrigingMode:
        return KrigingMode(self.mode)


@dataclasses.dataclass(frozen=True)
class XvalSection:
    target_height_m: float = 30.0
    pool_heights_m: Tuple[float, ...] = (30.0, 50.0, 70.0)
    m_values: Tuple[int, ...] = (25, 50, 100)
    n0: int = DEFAULT_N0
    r0_values_m: Tuple[float, ...] = (DEFAULT_R0_M,)
    iterations: int = DEFAULT_XVAL_ITERATIONS
    exclude_training: bool = True

    def __post_init__(self) -> None:
        if not (self.pool_heights_m and self.m_values and self.r0_values_m):
            raise ConfigError(
                "[xval] pool_heights_m, m_values and r0_values_m must not "
                "be empty"
            )
        if self.iterations < 1:
            raise ConfigError("[xval] iterations must be positive")


@dataclasses.dataclass(frozen=True)
class MapSection:
    """Grid extents; missing extents follow the pool's bounding box."""

    lat_min: Optional[float] = None
    lat_max: Optional[float] = None
    lat_step: Optional[float] = None
    lon_min: Optional[float] = None
    lon_max: Optional[float] = None
    lon_step: Optional[float] = None
    alt_min: Optional[float] = None
    alt_max: Optional[float] = None
    alt_step: Optional[float] = None
    spacing_m: float = 10.0
    m_max: int = DEFAULT_M_MAX
    r0_m: float = DEFAULT_R0_M

    def __post_init__(self) -> None:
        if not self.spacing_m > 0:
            raise ConfigError("[map] spacing_m must be positive")


@dataclasses.dataclass(frozen=True)
class SynthSection:
    offset_east_m: float = 20.0
    offset_north_m: float = 20.0
    width_m: float = 200.0
    length_m: float = 200.0
    leg_spacing_m: float = 50.0
    sample_spacing_m: float = DEFAULT_SAMPLE_SPACING_M
    heights_m: Tuple[float, ...] = DEFAULT_HEIGHTS_M
    speed_mps: float = 5.0
    waypoints: Optional[Tuple[Tuple[float, float], ...]] = None
    shadowing: bool = True
    a: float = DEFAULT_MIXTURE_WEIGHT
    b1: float = DEFAULT_B1_PER_M
    b2: float = DEFAULT_B2_PER_M
    d_cor_m: float = DEFAULT_D_COR_M
    sigma_w2: float = DEFAULT_SIGMA_W_DB ** 2
    mean_offsets_db: Mapping[str, float] = dataclasses.field(
        default_factory=dict
    )

    def __post_init__(self) -> None:
        if self.waypoints is not None:
            object.__setattr__(
                self, "waypoints",
                tuple(
                    (float(p[0]), float(p[1])) for p in self.waypoints
                ),
            )
        self.offsets_by_height()
        try:
            self.correlation_model()
        except DataError as error:
            raise ConfigError(f"[synth] {error}") from error

    def correlation_model(self) -> CorrelationModel3D:
        return CorrelationModel3D(
            a=float(self.a), b1=float(self.b1), b2=float(self.b2),
            d_cor_m=float(self.d_cor_m), sigma_w2=float(self.sigma_w2),
        )

    def offsets_by_height(self) -> Dict[float, float]:
        try:
            return {
                float(height): float(offset)
                for height, offset in self.mean_offsets_db.items()
            }
        except ValueError as error:
            raise ConfigError(
                "[synth] mean_offsets_db keys must be heights in meters"
            ) from error


@dataclasses.dataclass(frozen=True)
class RadioMapConfig:
    pipeline: PipelineSection = dataclasses.field(
        default_factory=PipelineSection
    )
    data: DataSection = dataclasses.field(default_factory=DataSection)
    flights: Tuple[FlightEntry, ...] = ()
    calibration: CalibrationSection = dataclasses.field(
        default_factory=CalibrationSection
    )
    base_station: BaseStationSection = dataclasses.field(
        default_factory=BaseStationSection
    )
    propagation: PropagationSection = dataclasses.field(
        default_factory=PropagationSection
    )
    antenna_bs: AntennaSection = dataclasses.field(
        default_factory=AntennaSection
    )
    antenna_uav: AntennaSection = dataclasses.field(
        default_factory=AntennaSection
    )
    fit: FitSection = dataclasses.field(default_factory=FitSection)
    correlation: CorrelationSection = dataclasses.field(
        default_factory=CorrelationSection
    )
    model: ModelSection = dataclasses.field(default_factory=ModelSection)
    kriging: KrigingSection = dataclasses.field(default_factory=KrigingSection)
    xval: XvalSection = dataclasses.field(default_factory=XvalSection)
    map: MapSection = dataclasses.field(default_factory=MapSection)
    synth: SynthSection = dataclasses.field(default_factory=SynthSection)
    source_path: Optional[pathlib.Path] = None
    raw: Mapping[str, Any] = dataclasses.field(default_factory=dict)

    def propagation_config(
        self,
        bs_pattern: Optional[antenna.AntennaPattern] = None,
        uav_pattern: Optional[antenna.AntennaPattern] = None,
    ) -> PropagationConfig:
        return PropagationConfig(
            carrier_hz=float(self.propagation.carrier_hz),
            tx_power_dbm=float(self.propagation.tx_power_dbm),
            epsilon0=float(self.propagation.epsilon0),
            bs_pattern=(
                self.antenna_bs.build() if bs_pattern is None else bs_pattern
            ),
            uav_pattern=(
                self.antenna_uav.build() if uav_pattern is None
                else uav_pattern
            ),
            bs_height_m=float(self.base_station.height_m),
            angle_mask=self.propagation.angle_mask(),
        )

    @property
    def digest(self) -> str:
        return utils.config_hash(dict(self.raw))


def _as_tuple(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_as_tuple(item) for item in value)
    return value


def build_section(
    cls: Type[SectionType],
    table: Mapping[str, Any],
    section: str,
    resolve: Optional[Callable[[str], pathlib.Path]] = None,
) -> SectionType:
    """Create a section dataclass, rejecting keys it does not declare."""
    if not isinstance(table, Mapping):
        raise ConfigError(f"[{section}] must be a table")
    fields = {field.name for field in dataclasses.fields(cls)}
    unknown = sorted(set(table) - fields)
    if unknown:
        raise ConfigError(
            f"unknown key{'s' if len(unknown) > 1 else ''} in [{section}]: "
            f"{', '.join(unknown)}"
        )
    values: Dict[str, Any] = {}
    for key, value in table.items():
        if key in ("path", "targets") and value is not None:
            if resolve is None:
                value = pathlib.Path(value)
            else:
                try:
                    value = resolve(str(value))
                except FileNotFoundError as error:
                    raise ConfigError(f"[{section}] {key}: {error}") from error
        values[key] = value if isinstance(value, Mapping) \
            else _as_tuple(value)
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as error:
        raise ConfigError(f"invalid [{section}] table: {error}") from error


section_types: Mapping[str, Type[Any]] = {
    "pipeline": PipelineSection,
    "data": DataSection,
    "calibration": CalibrationSection,
    "base_station": BaseStationSection,
    "propagation": PropagationSection,
    "fit": FitSection,
    "correlation": CorrelationSection,
    "model": ModelSection,
    "kriging": KrigingSection,
    "xval": XvalSection,
    "map": MapSection,
    "synth": SynthSection,
}


def config_from_dict(
    data: Mapping[str, Any],
    base_dir: Optional[pathlib.Path] = None,
    source_path: Optional[pathlib.Path] = None,
) -> RadioMapConfig:
    """Map a parsed TOML document onto a :class:`RadioMapConfig`.

    Relative paths are searched for in ``base_dir`` first and then in the
    working directory.
    """
    search_paths: List[str] = []
    if base_dir is not None:
        search_paths.append(str(base_dir))
    search_paths.append(os.getcwd())
    locate = utils.LocateInputFile(search_paths, strict=False)

    allowed = set(section_types) | {"flights", "antenna"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown configuration tables: {', '.join(unknown)}"
        )

    sections: Dict[str, Any] = {
        name: build_section(cls, data.get(name, {}), name, locate)
        for name, cls in section_types.items()
    }

    antennas = data.get("antenna", {})
    unknown = sorted(set(antennas) - {"bs", "uav"})
    if unknown:
        raise ConfigError(f"unknown antenna tables: {', '.join(unknown)}")
    sections["antenna_bs"] = build_section(
        AntennaSection, antennas.get("bs", {}), "antenna.bs", locate
    )
    sections["antenna_uav"] = build_section(
        AntennaSection, antennas.get("uav", {}), "antenna.uav", locate
    )

    flights = data.get("flights", [])
    if not isinstance(flights, list):
        raise ConfigError("[[flights]] must be an array of tables")
    sections["flights"] = tuple(
        build_section(FlightEntry, entry, "flights", locate)
        for entry in flights
    )
    if sections["data"].source == "files" and not sections["flights"]:
        raise ConfigError("[data] source = 'files' needs [[flights]] entries")

    return RadioMapConfig(
        **sections, source_path=source_path, raw=dict(data)
    )


def load_config(
    path: pathlib.Path,
    loader: Callable[[BinaryIO], Dict[str, Any]] = tomllib.load,
) -> RadioMapConfig:
    """Read and validate a configuration file."""
    path = pathlib.Path(path)
    try:
        data = utils.read_toml_data(path, loader=loader)
    except tomllib.TOMLDecodeError as error:
        raise ConfigError(f"{path} is not valid TOML: {error}") from error
    logger.debug("Read configuration from %s", path)
    return config_from_dict(
        data, base_dir=path.parent.absolute(), source_path=path
    )
