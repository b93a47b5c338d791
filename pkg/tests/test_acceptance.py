"""Checks against the measured campaign.

Set ``AERIAL_RADIO_MAP_DATASET`` to a run configuration that points at the
five measured flights to enable these tests.
"""
import json
import os
import pathlib

import pandas as pd
import pytest

from aerial_radio_map import config, pipeline

DATASET = os.environ.get("AERIAL_RADIO_MAP_DATASET")

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(
        DATASET is None, reason="AERIAL_RADIO_MAP_DATASET is not set"
    ),
]

SHADOWING_BY_HEIGHT = {
    "30": (-4.26, 7.14, -2.13),
    "50": (-4.57, 6.45, -2.26),
    "70": (-0.34, 6.53, -2.57),
    "90": (-0.32, 6.90, -2.08),
    "110": (-0.27, 6.83, -2.27),
}


@pytest.fixture(scope="module")
def campaign(tmp_path_factory):
    cfg = config.load_config(pathlib.Path(str(DATASET)))
    out_dir = tmp_path_factory.mktemp("campaign")
    pipeline.run_pipeline(cfg, out_dir, stages=["shadowing", "correlate"])
    return out_dir


@pytest.mark.parametrize("height", sorted(SHADOWING_BY_HEIGHT, key=float))
def test_shadowing_statistics(campaign, height):
    stats = json.loads((campaign / "shadowing_stats.json").read_text())
    mean, std, alpha = SHADOWING_BY_HEIGHT[height]
    measured = stats["per_height"][height]
    assert measured["mean_db"] == pytest.approx(mean, abs=0.05)
    assert measured["std_db"] == pytest.approx(std, abs=0.05)
    assert measured["alpha"] == pytest.approx(alpha, abs=0.25)


def test_vertical_correlation_distance(campaign):
    report = json.loads((campaign / "correlation_model.json").read_text())
    assert 9.0 <= report["model"]["d_cor_m"] <= 14.0


def test_vertical_correlation_between_heights(campaign):
    frame = pd.read_csv(campaign / "correlation_vertical.csv")
    matrix = frame.set_index("height_m")
    assert matrix.loc[30.0, "50"] == pytest.approx(0.247, abs=0.05)
    neighbours = [matrix.loc[h, f"{h + 20:g}"] for h in (30.0, 50.0, 70.0)]
    assert all(value > 0.1 for value in neighbours)
    assert matrix.loc[30.0, "110"] < matrix.loc[30.0, "50"]
