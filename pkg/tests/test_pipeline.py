import json
import math
import pathlib

import numpy as np
import pandas as pd
import pytest

from aerial_radio_map import config, defaults, pipeline
from aerial_radio_map.exceptions import (
    ConfigError,
    DataError,
    InsufficientData,
    SingularSystem,
    StageFailure,
)
from aerial_radio_map.measurements import MeasurementSet

SMALL_RUN = {
    "pipeline": {"seed": 11},
    "synth": {
        "width_m": 0.0,
        "length_m": 40.0,
        "leg_spacing_m": 20.0,
        "sample_spacing_m": 4.0,
        "heights_m": [30.0, 50.0],
        "mean_offsets_db": {"30": -4.0},
    },
    "correlation": {"bin_m": 4.0, "max_distance_m": 40.0, "min_pairs": 5},
    "model": {"source": "config"},
    "map": {"spacing_m": 20.0, "m_max": 10, "r0_m": 60.0},
}


def make_samples(heights):
    heights = np.asarray(heights, dtype=float)
    n = heights.size
    return MeasurementSet(
        t_s=np.arange(n, dtype=float),
        lat_deg=35.7275 + 1e-4 * np.arange(n),
        lon_deg=np.full(n, -78.696),
        alt_m=heights,
        rsrp_dbm=np.full(n, -80.0),
        flight_id=np.array([f"h{h:g}m" for h in heights], dtype=object),
        height_label_m=heights,
        sample_id=np.arange(n, dtype=np.int64),
        calibrated=True,
    )


class TestResolveStages:
    def test_dependencies_come_first(self):
        cfg = config.config_from_dict({})
        assert pipeline.resolve_stages(["xval"], cfg) == [
            "antenna-load", "synth", "load", "shadowing", "correlate",
            "variogram", "xval",
        ]

    def test_configured_model_skips_correlate(self):
        cfg = config.config_from_dict({"model": {"source": "config"}})
        assert "correlate" not in pipeline.resolve_stages(["variogram"], cfg)

    def test_each_stage_once(self):
        cfg = config.config_from_dict({})
        order = pipeline.resolve_stages(["fit", "shadowing", "fit"], cfg)
        assert len(order) == len(set(order))

    def test_unknown_stage(self):
        with pytest.raises(ConfigError):
            pipeline.resolve_stages(["fly"], config.config_from_dict({}))

    def test_cycle(self):
        class First(pipeline.AbsStage):
            name = "first"
            requires = ("second",)

            def run(self, context):
                pass

        class Second(pipeline.AbsStage):
            name = "second"
            requires = ("first",)

            def run(self, context):
                pass

        registry = {"first": First, "second": Second}
        with pytest.raises(ConfigError) as error:
            pipeline.resolve_stages(
                ["first"], config.config_from_dict({}), registry
            )
        assert "cycle" in str(error.value)


class TestSelectHeights:
    def test_all_heights_when_unset(self):
        samples = make_samples([30, 50, 70])
        assert pipeline.select_heights(samples, None) is samples

    def test_subset(self):
        samples = make_samples([30, 50, 30, 70])
        chosen = pipeline.select_heights(samples, [30.0])
        assert chosen.sample_id.tolist() == [0, 2]

    def test_missing_height(self):
        with pytest.raises(InsufficientData):
            pipeline.select_heights(make_samples([30, 50]), [90.0])


def test_map_grid_defaults_to_pool_extent():
    pool = make_samples([30, 50, 70])
    grid = pipeline.map_grid(
        config.MapSection(spacing_m=10.0, alt_max=60.0), pool
    )
    assert grid.lat_min == pytest.approx(pool.lat_deg.min())
    assert grid.lat_max == pytest.approx(pool.lat_deg.max())
    assert grid.alt_step == 20.0
    assert grid.alt_max == 60.0
    assert grid.lat_step == pytest.approx(
        math.degrees(10.0 / defaults.EARTH_RADIUS_M)
    )


class TestRunPipelineFailures:
    @pytest.fixture
    def registry(self):
        class Write(pipeline.AbsStage):
            name = "write"

            def run(self, context):
                context.write_frame(pd.DataFrame({"x": [1]}), "partial.csv")
                (context.out_dir / "stray.txt").write_text("x")

        class Boom(pipeline.AbsStage):
            name = "boom"
            requires = ("write",)

            def run(self, context):
                raise SingularSystem("kriging matrix is singular")

        return {"write": Write, "boom": Boom}

    def test_failure_names_stage_and_cleans_up(self, tmp_path, registry):
        keep = tmp_path / "notes.txt"
        keep.write_text("mine")
        with pytest.raises(StageFailure) as error:
            pipeline.run_pipeline(
                config.config_from_dict({}), tmp_path,
                stages=["boom"], registry=registry,
            )
        assert error.value.stage == "boom"
        assert isinstance(error.value.__cause__, SingularSystem)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["notes.txt"]

    def test_failure_keeps_outputs_from_earlier_runs(
        self, tmp_path, registry
    ):
        earlier = tmp_path / "partial.csv"
        earlier.write_text("x\n0\n")
        with pytest.raises(StageFailure):
            pipeline.run_pipeline(
                config.config_from_dict({}), tmp_path,
                stages=["boom"], registry=registry,
            )
        assert earlier.is_file()
        assert not (tmp_path / "stray.txt").exists()

    def test_successful_stage_gets_manifest(self, tmp_path, registry):
        result = pipeline.run_pipeline(
            config.config_from_dict({}), tmp_path,
            stages=["write"], registry=registry,
        )
        assert result.stages == ["write"]
        assert [p.name for p in result.artifacts] == ["partial.csv"]
        manifest = json.loads(result.manifest.read_text())
        assert list(manifest["artifact_sha256"]) == ["partial.csv"]

    @pytest.mark.parametrize("seed, threads", [(-1, 1), (2 ** 64, 1), (0, 0)])
    def test_rejects_invalid_run_options(
        self, tmp_path, registry, seed, threads
    ):
        with pytest.raises(DataError):
            pipeline.run_pipeline(
                config.config_from_dict({}), tmp_path, stages=["write"],
                seed=seed, threads=threads, registry=registry,
            )


class TestSyntheticRun:
    @pytest.fixture(scope="class")
    def run(self, tmp_path_factory):
        out_dir = tmp_path_factory.mktemp("run")
        cfg = config.config_from_dict(SMALL_RUN)
        return pipeline.run_pipeline(
            cfg, out_dir, stages=["synth", "shadowing", "variogram", "map"]
        )

    def test_stage_order(self, run):
        assert run.stages == [
            "antenna-load", "synth", "load", "shadowing", "variogram", "map"
        ]

    def test_artifacts(self, run):
        names = {path.name for path in run.artifacts}
        assert {
            "synthetic_h30m.csv",
            "synthetic_h50m_truth.csv",
            "synthetic_scenario.json",
            "shadowing.csv",
            "shadowing_stats.json",
            "semivariogram_horizontal.csv",
            "semivariogram_vertical.csv",
            "variogram.json",
            "radio_map.csv",
            "radio_map.json",
        } <= names
        assert all(path.is_file() for path in run.artifacts)

    def test_shadowing_matches_truth(self, run):
        frame = pd.read_csv(run.manifest.parent / "shadowing.csv")
        assert len(frame) == 22
        np.testing.assert_allclose(
            frame["w_db"], frame["true_w_db"], atol=1e-6
        )

    def test_radio_map_covers_grid(self, run):
        frame = pd.read_csv(run.manifest.parent / "radio_map.csv")
        assert len(frame) == 6
        assert sorted(frame["alt_m"].unique()) == [30.0, 50.0]
        assert frame["predicted_dbm"].notna().all()

    def test_manifest(self, run):
        manifest = json.loads(run.manifest.read_text())
        assert manifest["stages"] == run.stages
        assert manifest["provenance"]["seed"] == 11
        assert "radio_map.csv" in manifest["artifact_sha256"]

    def test_deterministic(self, run, tmp_path):
        again = pipeline.run_pipeline(
            config.config_from_dict(SMALL_RUN),
            tmp_path,
            stages=["synth", "shadowing", "variogram", "map"],
        )
        for name in ("radio_map.csv", "shadowing.csv", "manifest.json"):
            assert (tmp_path / name).read_bytes() == (
                run.manifest.parent / name
            ).read_bytes()
        assert again.stages == run.stages


@pytest.mark.slow
class TestShippedSyntheticConfig:
    CONFIG = (
        pathlib.Path(__file__).parent.parent / "configs" / "synthetic.toml"
    )

    @pytest.fixture(scope="class")
    def runs(self, tmp_path_factory):
        cfg = config.load_config(self.CONFIG)
        return [
            pipeline.run_pipeline(cfg, tmp_path_factory.mktemp(name))
            for name in ("first", "second")
        ]

    def test_runs_every_stage(self, runs):
        assert {"correlate", "xval", "map"} <= set(runs[0].stages)

    def test_mixture_weight_is_held_fixed(self, runs):
        report = json.loads(
            (runs[0].manifest.parent / "correlation_model.json").read_text()
        )
        assert report["model"]["a"] == 0.3

    def test_same_seed_gives_identical_artifacts(self, runs):
        first, second = (run.manifest.parent for run in runs)
        names = sorted(path.name for path in first.iterdir())
        assert names == sorted(path.name for path in second.iterdir())
        for name in names:
            assert (first / name).read_bytes() == (
                second / name
            ).read_bytes(), name
