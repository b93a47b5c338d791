"""Stages that turn flights into shadowing models and radio maps."""
from __future__ import annotations

import abc
import dataclasses
import logging
import math
import pathlib
from typing import (
    Any,
    Dict,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
    Type,
)

import numpy as np
import pandas as pd

from aerial_radio_map import (
    fitting,
    geo,
    kriging,
    reports,
    spatial_stats,
    synth,
    utils,
)
from aerial_radio_map.config import MapSection, RadioMapConfig
from aerial_radio_map.defaults import EARTH_RADIUS_M
from aerial_radio_map.exceptions import (
    ConfigError,
    DataError,
    InsufficientData,
    StageFailure,
    TooFewSamples,
)
from aerial_radio_map.measurements import (
    MeasurementSet,
    load_measurements,
    read_locations,
)
from aerial_radio_map.propagation import extract_shadowing, fit_permittivity

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class RunContext:
    """State shared by the stages of one run."""

    config: RadioMapConfig
    out_dir: pathlib.Path
    seed: int
    threads: int = 1
    artifacts: List[pathlib.Path] = dataclasses.field(default_factory=list)
    inputs: List[pathlib.Path] = dataclasses.field(default_factory=list)
    results: Dict[str, Any] = dataclasses.field(default_factory=dict)

    def stage_seed(self, stage: str) -> int:
        return utils.stage_seed(self.seed, stage)

    def provenance(self) -> reports.Provenance:
        return reports.Provenance.create(
            self.config.digest, self.seed, self.inputs
        )

    def add_input(self, path: pathlib.Path) -> None:
        if path not in self.inputs:
            self.inputs.append(path)

    def artifact(self, file_name: str) -> pathlib.Path:
        path = self.out_dir / file_name
        if path not in self.artifacts:
            self.artifacts.append(path)
        return path

    def write_frame(self, frame: pd.DataFrame, file_name: str) -> None:
        path = reports.write_frame(frame, self.artifact(file_name))
        logger.info("Wrote %s", path)

    def write_report(
        self, generator: reports.AbsReportGenerator[Any]
    ) -> None:
        self.artifact(generator.file_name)
        path = generator.write(self.out_dir)
        logger.info("Wrote %s", path)

    def trend(self) -> kriging.PathLossTrend:
        return kriging.PathLossTrend(
            self.results["propagation"],
            self.results["base_station"],
            self.config.propagation.pathloss_model,
        )


class AbsStage(abc.ABC, metaclass=utils.MetaClassWithAbstractClassAttrs):
    name: str = utils.abstract_attribute()
    requires: Tuple[str, ...] = ()

    def dependencies(self, config: RadioMapConfig) -> Tuple[str, ...]:
        return self.requires

    @abc.abstractmethod
    def run(self, context: RunContext) -> None:
        """Compute the stage results and write its artifacts."""


def _height_key(height_m: float) -> str:
    return f"{height_m:g}"


def select_heights(
    samples: MeasurementSet, heights_m: Optional[Sequence[float]]
) -> MeasurementSet:
    """Samples whose height label is one of ``heights_m`` (all if None)."""
    if heights_m is None:
        return samples
    labels = np.round(np.asarray(samples.height_label_m, dtype=float), 6)
    wanted = np.round(np.asarray(heights_m, dtype=float), 6)
    chosen = np.flatnonzero(np.isin(labels, wanted))
    if chosen.size == 0:
        raise InsufficientData(
            f"no samples at heights {', '.join(map(_height_key, wanted))} m"
        )
    return samples.subset(chosen)


class AntennaLoadStage(AbsStage):
    name = "antenna-load"

    def run(self, context: RunContext) -> None:
        config = context.config
        for section in (config.antenna_bs, config.antenna_uav):
            if section.path is not None:
                context.add_input(section.path)
        bs_pattern = config.antenna_bs.build()
        uav_pattern = config.antenna_uav.build()
        context.results["propagation"] = config.propagation_config(
            bs_pattern, uav_pattern
        )
        context.results["base_station"] = config.base_station.location()
        logger.info(
            "Antenna patterns: base station %s, UAV %s",
            bs_pattern.kind, uav_pattern.kind
        )


class SynthStage(AbsStage):
    name = "synth"
    requires = ("antenna-load",)

    def run(self, context: RunContext) -> None:
        section = context.config.synth
        bs = context.results["base_station"]
        origin = geo.offset_locations(
            bs.with_altitude(0.0),
            [section.offset_east_m], [section.offset_north_m], 0.0,
        )[0]
        trajectory = synth.TrajectorySpec(
            origin=origin,
            width_m=section.width_m,
            length_m=section.length_m,
            leg_spacing_m=section.leg_spacing_m,
            sample_spacing_m=section.sample_spacing_m,
            heights_m=tuple(float(h) for h in section.heights_m),
            waypoints=section.waypoints,
            speed_mps=section.speed_mps,
        )
        scenario = synth.SyntheticScenario(
            cfg=context.results["propagation"],
            bs=bs,
            model=section.correlation_model(),
            trajectory=trajectory,
            seed=context.stage_seed(self.name),
            mean_offsets_db=section.offsets_by_height(),
            pathloss_model=context.config.propagation.pathloss_model,
            shadowing_enabled=section.shadowing,
        )
        samples = synth.synthesize_rsrp(scenario)
        for path in synth.write_synthetic_dataset(samples, context.out_dir):
            context.artifact(path.name)
        context.results["synthetic"] = samples
        context.write_report(
            reports.SyntheticScenarioReportGenerator(
                reports.SyntheticScenarioReport(
                    provenance=context.provenance(),
                    base_station=dataclasses.asdict(bs),
                    trajectory=dataclasses.asdict(trajectory),
                    model=scenario.model,
                    pathloss_model=scenario.pathloss_model.value,
                    mean_offsets_db={
                        _height_key(h): v
                        for h, v in scenario.mean_offsets_db.items()
                    },
                    shadowing_enabled=scenario.shadowing_enabled,
                    flights=samples.flight_ids(),
                    n_samples=len(samples),
                )
            )
        )


class LoadStage(AbsStage):
    name = "load"

    def dependencies(self, config: RadioMapConfig) -> Tuple[str, ...]:
        if config.data.source == "synthetic":
            return ("synth",)
        return ()

    def run(self, context: RunContext) -> None:
        config = context.config
        if config.data.source == "synthetic":
            samples = context.results["synthetic"]
        else:
            calibration = config.calibration.spec()
            loaded = []
            for entry in config.flights:
                context.add_input(entry.path)
                loaded.append(
                    load_measurements(
                        entry.path,
                        calibration,
                        flight_id=entry.flight_id,
                        height_label_m=entry.height_m,
                    )
                )
            samples = MeasurementSet.concat(loaded)
        context.results["samples"] = samples
        logger.info(
            "Using %d samples from %d flights",
            len(samples), len(samples.flight_ids())
        )


class FitStage(AbsStage):
    name = "fit"
    requires = ("antenna-load", "load")

    def run(self, context: RunContext) -> None:
        section = context.config.fit
        cfg = context.results["propagation"]
        bs = context.results["base_station"]
        samples = context.results["samples"]
        setups = fitting.pattern_setups(
            section.compare_patterns, cfg.bs_pattern, cfg.uav_pattern
        )
        fits, by_distance = fitting.compare_setups(
            cfg, bs, samples, setups, distance_bin_m=section.distance_bin_m
        )
        fitted_epsilon0 = (
            fit_permittivity(cfg, bs, samples)
            if section.fit_permittivity else None
        )
        best = fitting.best_setup(fits)
        context.write_frame(by_distance, "pathloss_error_by_distance.csv")
        context.write_report(
            reports.PathLossFitReportGenerator(
                reports.PathLossFitReport(
                    provenance=context.provenance(),
                    epsilon0=cfg.epsilon0,
                    fitted_epsilon0=fitted_epsilon0,
                    best_setup=None if best is None else best.setup,
                    best_pathloss_model=(
                        None if best is None else best.pathloss_model
                    ),
                    setups=fits,
                )
            )
        )


def describe_shadowing(w_db: np.ndarray) -> spatial_stats.ShadowingStats:
    """Skew-normal statistics, or Gaussian ones for small samples."""
    try:
        return spatial_stats.fit_skew_normal(w_db)
    except TooFewSamples:
        gaussian = spatial_stats.fit_gaussian(w_db)
        logger.warning(
            "Only %d shadowing samples; skipping the skew-normal fit",
            np.size(w_db)
        )
        return spatial_stats.ShadowingStats(
            mean_db=gaussian.mean_db,
            std_db=gaussian.std_db,
            alpha=0.0,
            nmse_gaussian=float("nan"),
            nmse_skewed=float("nan"),
            xi=gaussian.mean_db,
            omega=gaussian.std_db,
            n_samples=int(np.size(w_db)),
        )


class ShadowingStage(AbsStage):
    name = "shadowing"
    requires = ("antenna-load", "load")

    def run(self, context: RunContext) -> None:
        cfg = context.results["propagation"]
        bs = context.results["base_station"]
        samples = context.results["samples"]
        model = context.config.propagation.pathloss_model
        extraction = extract_shadowing(cfg, bs, samples, model)

        series = []
        for flight in samples.flight_ids():
            rows = np.flatnonzero(samples.flight_id == flight)
            subset = samples.subset(rows)
            series.append(
                spatial_stats.ShadowingSeries.from_values(
                    flight, subset.flight_height(), subset.locations,
                    extraction.w_db[rows],
                )
            )

        labels = np.asarray(samples.height_label_m, dtype=float)
        usable = extraction.valid & np.isfinite(extraction.w_db)
        per_height = {
            float(height): describe_shadowing(
                extraction.w_db[usable & (labels == height)]
            )
            for height in np.unique(labels)
        }
        pooled = describe_shadowing(extraction.w_db[usable])
        variance = spatial_stats.pooled_variance(series)

        frame = pd.DataFrame({
            "sample_id": samples.sample_id,
            "flight_id": samples.flight_id,
            "height_label_m": labels,
            "lat_deg": samples.lat_deg,
            "lon_deg": samples.lon_deg,
            "alt_m": samples.alt_m,
            "rsrp_dbm": samples.rsrp_dbm,
            "w_db": extraction.w_db,
            "valid": extraction.valid.astype(int),
        })
        if samples.true_w_db is not None:
            frame["true_w_db"] = samples.true_w_db
        context.write_frame(frame, "shadowing.csv")
        context.write_report(
            reports.ShadowingStatsReportGenerator(
                reports.ShadowingStatsReport(
                    provenance=context.provenance(),
                    pathloss_model=model.value,
                    n_samples=len(samples),
                    flagged_samples=extraction.flagged_count,
                    pooled_variance_db2=variance,
                    pooled=pooled,
                    per_height={
                        _height_key(h): stats
                        for h, stats in per_height.items()
                    },
                )
            )
        )
        context.results["series"] = series
        context.results["height_stats"] = per_height
        context.results["pooled_variance"] = variance
        logger.info(
            "Shadowing: mean %.2f dB, std %.2f dB over %d samples",
            pooled.mean_db, pooled.std_db, pooled.n_samples
        )


class CorrelateStage(AbsStage):
    name = "correlate"
    requires = ("shadowing",)

    def run(self, context: RunContext) -> None:
        section = context.config.correlation
        series = context.results["series"]
        seed = context.stage_seed(self.name)
        curves = spatial_stats.correlation_3d(
            series, section.bin_m, section.max_distance_m, context.threads
        )
        vertical = spatial_stats.vertical_correlation(
            series, section.vertical_match_m, section.min_pairs
        )
        offsets, means = spatial_stats.vertical_profile(vertical)
        d_cor = spatial_stats.fit_exponential_vertical(offsets, means)
        horizontal_fit = spatial_stats.fit_biexponential(
            curves[0.0], fixed_a=section.a,
            n_starts=section.fit_starts, seed=seed,
        )
        per_offset = spatial_stats.fit_per_offset(
            curves, d_cor, a=section.a, seed=seed
        )
        model = spatial_stats.CorrelationModel3D(
            a=section.a,
            b1=horizontal_fit.b1,
            b2=horizontal_fit.b2,
            d_cor_m=d_cor,
            sigma_w2=context.results["pooled_variance"],
        )
        logger.info(
            "Correlation model: a=%.3f b1=%.4f b2=%.4f d_cor=%.2f m",
            model.a, model.b1, model.b2, model.d_cor_m
        )

        context.write_frame(
            curves[0.0].to_frame(), "correlation_horizontal.csv"
        )
        context.write_frame(vertical.to_frame(), "correlation_vertical.csv")
        for offset, curve in curves.items():
            context.write_frame(
                curve.to_frame(), f"correlation_3d_dv{offset:g}.csv"
            )
        context.write_report(
            reports.CorrelationModelReportGenerator(
                reports.CorrelationModelReport(
                    provenance=context.provenance(),
                    model=model,
                    horizontal_fit_cost=horizontal_fit.cost,
                    vertical_offsets_m=[float(d) for d in offsets],
                    vertical_mean_correlation=[float(r) for r in means],
                    per_offset=per_offset,
                )
            )
        )
        context.results["correlation_model"] = model


class VariogramStage(AbsStage):
    name = "variogram"

    def dependencies(self, config: RadioMapConfig) -> Tuple[str, ...]:
        if config.model.source == "estimate":
            return ("shadowing", "correlate")
        return ("shadowing",)

    def run(self, context: RunContext) -> None:
        config = context.config
        if config.model.source == "estimate":
            model = context.results["correlation_model"]
        else:
            model = config.model.correlation_model()
        variogram = kriging.Variogram(model, nugget=config.kriging.nugget)
        series = context.results["series"]

        horizontal = spatial_stats.empirical_semivariogram_horizontal(
            series,
            config.correlation.bin_m,
            config.correlation.max_distance_m,
            context.threads,
        )
        frame = horizontal.to_frame("empirical_db2")
        frame["model_db2"] = variogram.gamma(0.0, horizontal.bin_centers_m)
        context.write_frame(frame, "semivariogram_horizontal.csv")

        if len({s.height_m for s in series}) > 1:
            vertical = spatial_stats.empirical_semivariogram_vertical(
                series,
                config.correlation.vertical_match_m,
                config.correlation.min_pairs,
            )
            frame = vertical.to_frame("empirical_db2")
            frame["model_db2"] = variogram.gamma(vertical.bin_centers_m, 0.0)
        else:
            logger.warning(
                "Single flight height; vertical semivariogram is empty"
            )
            frame = pd.DataFrame(
                columns=["distance_m", "empirical_db2", "count", "model_db2"]
            )
        context.write_frame(frame, "semivariogram_vertical.csv")
        context.write_report(
            reports.VariogramReportGenerator(
                reports.VariogramReport(
                    provenance=context.provenance(),
                    source=config.model.source,
                    variogram=variogram.to_dict(),
                )
            )
        )
        context.results["variogram"] = variogram


class KrigeStage(AbsStage):
    name = "krige"
    requires = ("antenna-load", "load", "variogram")

    def run(self, context: RunContext) -> None:
        section = context.config.kriging
        if section.targets is None:
            raise ConfigError("[kriging] targets is required to krige")
        context.add_input(section.targets)
        targets = read_locations(section.targets)
        pool = select_heights(
            context.results["samples"], section.pool_heights_m
        )
        predictor = kriging.KrigingPredictor(
            context.results["variogram"],
            pool,
            r0_m=section.r0_m,
            m_max=section.m_max,
            mode=section.kriging_mode,
            trend=context.trend(),
        )
        prediction = predictor.predict(targets, threads=context.threads)
        frame = kriging.RadioMap(targets, prediction).to_frame()
        frame["variance_db2"] = prediction.variance
        context.write_frame(frame, "kriging_predictions.csv")


class XvalStage(AbsStage):
    name = "xval"
    requires = ("antenna-load", "load", "shadowing", "variogram")

    def run(self, context: RunContext) -> None:
        section = context.config.xval
        mode = context.config.kriging.kriging_mode
        samples = context.results["samples"]
        targets = select_heights(samples, (section.target_height_m,))
        stats = context.results["height_stats"]
        target_stats = next(
            (s for h, s in stats.items()
             if math.isclose(h, section.target_height_m, abs_tol=1e-6)),
            None,
        )
        if target_stats is None:
            raise InsufficientData(
                f"no shadowing statistics at {section.target_height_m:g} m"
            )
        baseline = kriging.baseline_rmse(target_stats)

        rows = []
        for pool_height in section.pool_heights_m:
            pool = select_heights(samples, (pool_height,))
            summaries = kriging.cross_validation_sweep(
                context.results["variogram"],
                pool,
                targets,
                m_values=section.m_values,
                r0_values_m=section.r0_values_m,
                N0=section.n0,
                iterations=section.iterations,
                seed=context.stage_seed(self.name),
                exclude_training=section.exclude_training,
                mode=mode,
                trend=context.trend(),
                threads=context.threads,
            )
            for summary in summaries:
                rows.append({
                    "pool_height_m": float(pool_height),
                    **summary.to_dict(),
                    "baseline_rmse_db": baseline,
                })
        context.write_frame(pd.DataFrame(rows), "xval_rmse.csv")
        context.write_report(
            reports.XvalReportGenerator(
                reports.XvalReport(
                    provenance=context.provenance(),
                    mode=mode.value,
                    target_height_m=float(section.target_height_m),
                    baseline_rmse_db=baseline,
                    exclude_training=section.exclude_training,
                    runs=rows,
                )
            )
        )


def map_grid(section: MapSection, pool: MeasurementSet) -> kriging.GridSpec:
    """Grid from the configured extents, filling gaps from the pool."""
    lat = np.asarray(pool.lat_deg, dtype=float)
    lon = np.asarray(pool.lon_deg, dtype=float)
    heights = np.unique(np.asarray(pool.height_label_m, dtype=float))
    lat_step = math.degrees(section.spacing_m / EARTH_RADIUS_M)
    lon_step = lat_step / math.cos(math.radians(float(lat.mean())))
    alt_step = (
        float(np.min(np.diff(heights))) if heights.size > 1
        else section.spacing_m
    )

    def pick(value: Optional[float], default: float) -> float:
        return float(default) if value is None else float(value)

    return kriging.GridSpec(
        lat_min=pick(section.lat_min, lat.min()),
        lat_max=pick(section.lat_max, lat.max()),
        lat_step=pick(section.lat_step, lat_step),
        lon_min=pick(section.lon_min, lon.min()),
        lon_max=pick(section.lon_max, lon.max()),
        lon_step=pick(section.lon_step, lon_step),
        alt_min=pick(section.alt_min, heights.min()),
        alt_max=pick(section.alt_max, heights.max()),
        alt_step=pick(section.alt_step, alt_step),
    )


class MapStage(AbsStage):
    name = "map"
    requires = ("antenna-load", "load", "variogram")

    def run(self, context: RunContext) -> None:
        config = context.config
        section = config.map
        pool = select_heights(
            context.results["samples"], config.kriging.pool_heights_m
        )
        grid = map_grid(section, pool)
        variogram = context.results["variogram"]
        radio_map = kriging.generate_radio_map(
            variogram,
            pool,
            grid,
            M=section.m_max,
            r0_m=section.r0_m,
            trend=context.trend(),
            mode=config.kriging.kriging_mode,
            threads=context.threads,
        )
        context.write_frame(radio_map.to_frame(), "radio_map.csv")
        context.write_report(
            reports.RadioMapReportGenerator(
                reports.RadioMapReport(
                    provenance=context.provenance(),
                    grid=grid,
                    mode=config.kriging.mode,
                    m_max=section.m_max,
                    r0_m=section.r0_m,
                    pool_size=len(pool),
                    nodes=len(radio_map.locations),
                    fallback_nodes=int(radio_map.prediction.fallback.sum()),
                    variogram=variogram.to_dict(),
                )
            )
        )


stage_registry: Mapping[str, Type[AbsStage]] = {
    stage.name: stage
    for stage in (
        AntennaLoadStage,
        SynthStage,
        LoadStage,
        FitStage,
        ShadowingStage,
        CorrelateStage,
        VariogramStage,
        KrigeStage,
        XvalStage,
        MapStage,
    )
}


def resolve_stages(
    requested: Sequence[str],
    config: RadioMapConfig,
    registry: Optional[Mapping[str, Type[AbsStage]]] = None,
) -> List[str]:
    """Requested stages preceded by their dependencies, each once."""
    registry = stage_registry if registry is None else registry
    order: List[str] = []
    visiting: Set[str] = set()

    def visit(name: str) -> None:
        if name in order:
            return
        if name in visiting:
            raise ConfigError(f"stage dependencies form a cycle at {name}")
        stage_type = registry.get(name)
        if stage_type is None:
            raise ConfigError(f"unknown stage '{name}'")
        visiting.add(name)
        for dependency in stage_type().dependencies(config):
            visit(dependency)
        visiting.discard(name)
        order.append(name)

    for name in requested:
        visit(name)
    return order


@dataclasses.dataclass(frozen=True)
class RunResult:
    stages: List[str]
    artifacts: List[pathlib.Path]
    manifest: pathlib.Path


def _remove_artifacts(
    context: RunContext, existing: Set[pathlib.Path]
) -> None:
    created = set(context.out_dir.iterdir()) - existing
    for path in sorted(created):
        if path.is_file():
            path.unlink()
            logger.debug("Removed %s", path)


def run_pipeline(
    config: RadioMapConfig,
    out_dir: pathlib.Path,
    stages: Optional[Sequence[str]] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    registry: Optional[Mapping[str, Type[AbsStage]]] = None,
) -> RunResult:
    """Run the requested stages and their dependencies.

    Artifacts go to ``out_dir`` followed by a manifest of their digests. If
    a stage fails, everything written by the run is removed and a
    :class:`StageFailure` naming the stage is raised.
    """
    registry = stage_registry if registry is None else registry
    seed = config.pipeline.seed if seed is None else seed
    threads = config.pipeline.threads if threads is None else threads
    if not 0 <= seed < 2 ** 64:
        raise DataError(f"seed {seed} is not an unsigned 64 bit integer")
    if threads < 1:
        raise DataError("threads must be positive")

    order = resolve_stages(
        config.pipeline.stages if stages is None else stages,
        config,
        registry,
    )
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    existing = set(out_dir.iterdir())
    context = RunContext(config, out_dir, seed, threads)
    logger.info("Running stages: %s", ", ".join(order))
    for name in order:
        logger.info("Stage %s", name)
        try:
            registry[name]().run(context)
        except Exception as error:
            logger.error("Stage %s failed: %s", name, error)
            _remove_artifacts(context, existing)
            raise StageFailure(name, str(error)) from error

    manifest = reports.write_manifest(
        out_dir, context.artifacts, order, context.provenance()
    )
    logger.info("Wrote %d artifacts and %s", len(context.artifacts), manifest)
    return RunResult(order, list(context.artifacts), manifest)
